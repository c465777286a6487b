//! Population synthesis, the run loop, sweeps and result files.

mod output;
mod population;
mod simulation;
mod sweep;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub use output::{
    chart_series, plot_rows, read_sweep_csv, render_svg, write_plots, write_sweep_csv, write_sweep_json, Metric,
    Series, SweepCsvRow,
};
pub use population::synthesize_population;
pub use simulation::{run_simulation, RoundReport, Simulation};
pub use sweep::{parse_float_range, parse_int_range, run_sweep, Dimension, SweepSpec, SweepTable};

use crate::metrics::MetricsError;
use crate::model::{
    parse_scenario_text, validate_scenario_with, ModelError, ScenarioSpec, SiteLayout, TransitionSet,
};
use crate::network::NetworkError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("sweep point patients={patients} participation={participation}: {source}")]
    Point {
        patients: u32,
        participation: f64,
        source: MetricsError,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Setup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit code: 2 for invalid input, 3 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Io(_) | HarnessError::Csv(_) | HarnessError::Json(_) => 3,
            _ => 2,
        }
    }
}

/// Config keys naming companion files; paths are relative to the config file.
const TRANSITIONS_FILE_KEY: &str = "transitions.file";
const SITES_FILE_KEY: &str = "sites.file";

/// Loads and validates a scenario file. `transitions.file` and `sites.file`
/// keys, when present, point at a transition-table CSV override and a
/// POI/destination coordinates CSV.
pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, HarnessError> {
    let text = fs::read_to_string(path)?;
    let mut raw = parse_scenario_text(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let transitions = match raw.remove(TRANSITIONS_FILE_KEY) {
        Some(file) => TransitionSet::atus_raw().overridden_by(&TransitionSet::from_csv(fs::File::open(base.join(file))?)?),
        None => TransitionSet::atus_raw(),
    };
    let sites = raw
        .remove(SITES_FILE_KEY)
        .map(|file| -> Result<SiteLayout, HarnessError> {
            Ok(SiteLayout::from_csv(fs::File::open(base.join(file))?)?)
        })
        .transpose()?;
    Ok(validate_scenario_with(&raw, &transitions, sites)?)
}

/// Applies `key=value` overrides on top of a loaded scenario.
pub fn apply_overrides(spec: &ScenarioSpec, overrides: &[(String, String)]) -> Result<ScenarioSpec, HarnessError> {
    if overrides.is_empty() {
        return Ok(spec.clone());
    }
    let mut raw: BTreeMap<String, String> = spec.to_raw();
    for (k, v) in overrides {
        raw.insert(k.clone(), v.clone());
    }
    Ok(validate_scenario_with(&raw, &spec.transitions, spec.sites.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClassGroup;

    #[test]
    fn load_with_companion_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("t.csv"),
            "class_group,period,kind,p_home,p_work,p_poi\nES,1,initial,2,0,0\nES,1,row_home,1,0,1\nES,1,row_work,0,1,0\nES,1,row_poi,0,0,1\n",
        )
        .unwrap();
        fs::write(dir.path().join("sites.csv"), "kind,col,row\npoi,1,2\npoi,3,4\ndestination,5,6\n").unwrap();
        fs::write(
            dir.path().join("s.conf"),
            "population.pois = 2\ntransitions.file = t.csv\nsites.file = sites.csv\nsim.seed = 4\n",
        )
        .unwrap();
        let spec = load_scenario(&dir.path().join("s.conf")).unwrap();
        assert_eq!(spec.seed, 4);
        let t = spec.transitions.get(ClassGroup::Es, 1).unwrap();
        assert_eq!(t.initial, [1.0, 0.0, 0.0]);
        assert_eq!(t.matrix[0], [0.5, 0.0, 0.5]);
        assert_eq!(spec.sites.as_ref().unwrap().destinations.len(), 1);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_scenario(Path::new("/nonexistent/scenario.conf")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn overrides_revalidate() {
        let spec = ScenarioSpec::default();
        let s = apply_overrides(&spec, &[("population.participation".into(), "0.6".into())]).unwrap();
        assert_eq!(s.population.participation, 0.6);
        let err = apply_overrides(&spec, &[("population.participation".into(), "0.01".into())]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
