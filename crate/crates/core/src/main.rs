use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rrpm_core::harness::{
    self, load_scenario, parse_float_range, parse_int_range, plot_rows, read_sweep_csv, run_sweep, write_plots,
    write_sweep_csv, write_sweep_json, Dimension, HarnessError, Metric, Simulation, SweepSpec,
};
use rrpm_core::mobility::TrajectoryWriter;
use rrpm_core::model::ScenarioSpec;
use rrpm_core::network::EventLogWriter;

#[derive(Parser)]
#[command(name = "rrpm", version, about = "Opportunistic rural patient-monitoring network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single seed and report delivery metrics.
    Run {
        /// Scenario file (`key = value` lines). Built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed; overrides `sim.seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the run result as JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dump mobile-node trajectories as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Dump contact/transfer/delivery/expiry events as CSV.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Run every (point, seed) pair of a parameter sweep.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `patients=2:2:10` or `participation=0.1:0.1:1.0`; repeatable.
        #[arg(long = "vary")]
        vary: Vec<String>,
        /// Inclusive seed range, e.g. `0:99`.
        #[arg(long, default_value = "0:99")]
        seeds: String,
        /// Sweep CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Full nested results as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Directory for SVG charts.
        #[arg(long)]
        plots: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Chart a metric from a sweep CSV.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        /// delivery | latency
        #[arg(long)]
        metric: String,
        /// patients | participation
        #[arg(long)]
        x: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(config: Option<&Path>) -> Result<ScenarioSpec, HarnessError> {
    match config {
        Some(path) => load_scenario(path),
        None => Ok(ScenarioSpec::default()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run_one(
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
    trace: Option<&Path>,
    events: Option<&Path>,
) -> Result<(), HarnessError> {
    let spec = load(config)?;
    let seed = seed.unwrap_or(spec.seed);
    let sim = Simulation::new(&spec, seed)?;

    let mut trace_w = trace.map(create).transpose()?.map(TrajectoryWriter::new).transpose()?;
    let mut event_w = events.map(create).transpose()?.map(EventLogWriter::new).transpose()?;
    if let Some(w) = trace_w.as_mut() {
        w.record(0, sim.mobile_nodes())?;
    }
    let result = sim.run_with(|sim, report| {
        if let Some(w) = trace_w.as_mut() {
            if report.time > 0 {
                w.record(report.time, sim.mobile_nodes())?;
            }
        }
        if let Some(w) = event_w.as_mut() {
            w.contacts(&report.contacts)?;
            w.round(
                report.time,
                &rrpm_core::network::RoundOutcome {
                    transfers: report.transfers.clone(),
                    deliveries: report.deliveries.clone(),
                },
            )?;
            w.expiries(report.time, &report.expired)?;
        }
        Ok(())
    })?;
    if let Some(w) = trace_w {
        w.finish()?;
    }
    if let Some(w) = event_w {
        w.finish()?;
    }

    match out {
        Some(path) => {
            let mut w = create(path)?;
            serde_json::to_writer_pretty(&mut w, &result)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, &result)?;
            writeln!(lock)?;
        }
    }
    eprintln!(
        "seed {seed}: delivered {}/{} (p = {:.3}), z_max = {}",
        result.delivered_count,
        result.total_messages,
        result.delivery_probability,
        result.z_max.map_or("n/a".to_string(), |z| format!("{z} min")),
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    config: Option<&Path>,
    vary: &[String],
    seeds: &str,
    out: Option<&Path>,
    json: Option<&Path>,
    plots: Option<&Path>,
    jobs: usize,
) -> Result<(), HarnessError> {
    let mut spec = SweepSpec::new(load(config)?);
    spec.seeds = parse_int_range(seeds)?;
    for v in vary {
        let (dim, range) = v
            .split_once('=')
            .ok_or_else(|| HarnessError::Usage(format!("--vary expects name=range, got `{v}`")))?;
        match Dimension::parse(dim.trim()) {
            Some(Dimension::Patients) => {
                spec.patients = parse_int_range(range)?
                    .into_iter()
                    .map(|p| u32::try_from(p).map_err(|_| HarnessError::Usage(format!("patient count {p} too large"))))
                    .collect::<Result<_, _>>()?;
            }
            Some(Dimension::Participation) => spec.participation = parse_float_range(range)?,
            None => return Err(HarnessError::Usage(format!("cannot vary `{dim}`"))),
        }
    }

    let table = run_sweep(&spec, jobs)?;
    match out {
        Some(path) => {
            let mut w = create(path)?;
            write_sweep_csv(&table, &mut w)?;
            w.flush()?;
        }
        None => write_sweep_csv(&table, io::stdout().lock())?,
    }
    if let Some(path) = json {
        let mut w = create(path)?;
        write_sweep_json(&table, &mut w)?;
        w.flush()?;
    }
    if let Some(dir) = plots {
        for p in write_plots(&table, dir)? {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn plot(input: &Path, metric: &str, x: &str, out: &Path) -> Result<(), HarnessError> {
    let metric = Metric::parse(metric).ok_or_else(|| HarnessError::Usage(format!("unknown metric `{metric}`")))?;
    let x = Dimension::parse(x).ok_or_else(|| HarnessError::Usage(format!("unknown x variable `{x}`")))?;
    let rows = read_sweep_csv(File::open(input)?)?;
    std::fs::write(out, plot_rows(&rows, metric, x))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result: Result<(), harness::HarnessError> = match &cli.command {
        Command::Run {
            config,
            seed,
            out,
            trace,
            events,
        } => run_one(config.as_deref(), *seed, out.as_deref(), trace.as_deref(), events.as_deref()),
        Command::Sweep {
            config,
            vary,
            seeds,
            out,
            json,
            plots,
            jobs,
        } => sweep(config.as_deref(), vary, seeds, out.as_deref(), json.as_deref(), plots.as_deref(), *jobs),
        Command::Plot { input, metric, x, out } => plot(input, metric, x, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
