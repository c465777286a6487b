use crate::model::{NodeClass, NodeInfo, Roster, ScenarioSpec};

/// Builds the node roster for a scenario.
///
/// Ids are assigned in blocks: patients, caregivers, clinical staff, employed
/// relays, unemployed relays, destinations, POIs. Caregiver `i` looks after
/// patient `i mod |A|`, which is a bijection when the two counts match.
pub fn synthesize_population(spec: &ScenarioSpec) -> Roster {
    let p = &spec.population;
    let blocks = [
        (NodeClass::Patient, p.patients),
        (NodeClass::Caregiver, p.caregivers),
        (NodeClass::ClinicalStaff, p.clinical_staff),
        (NodeClass::RelayEmployed, p.employed_relays()),
        (NodeClass::RelayUnemployed, p.unemployed_relays()),
        (NodeClass::Destination, p.destinations),
        (NodeClass::PointOfInterest, p.pois),
    ];
    let mut nodes = Vec::new();
    for (class, count) in blocks {
        for k in 0..count as usize {
            let paired_patient = (class == NodeClass::Caregiver).then(|| k % p.patients as usize);
            nodes.push(NodeInfo {
                id: nodes.len(),
                class,
                paired_patient,
            });
        }
    }
    Roster { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_scenario;
    use std::collections::{BTreeMap, BTreeSet};

    fn spec(pairs: &[(&str, &str)]) -> ScenarioSpec {
        let raw: BTreeMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        validate_scenario(&raw).unwrap()
    }

    #[test]
    fn default_counts() {
        let r = synthesize_population(&spec(&[]));
        assert_eq!(r.count(NodeClass::Patient), 10);
        assert_eq!(r.count(NodeClass::Caregiver), 10);
        assert_eq!(r.count(NodeClass::ClinicalStaff), 2);
        assert_eq!(r.count(NodeClass::RelayEmployed), 92);
        assert_eq!(r.count(NodeClass::RelayUnemployed), 6);
        assert_eq!(r.count(NodeClass::Destination), 1);
        assert_eq!(r.count(NodeClass::PointOfInterest), 25);
        assert!(r.nodes.iter().enumerate().all(|(i, n)| n.id == i));
    }

    #[test]
    fn full_participation_uses_every_adult() {
        let r = synthesize_population(&spec(&[("population.participation", "1.0")]));
        let people = r.nodes.iter().filter(|n| !n.class.is_stationary()).count();
        assert_eq!(people, 400);
    }

    #[test]
    fn pairing_is_bijective_when_counts_match() {
        let r = synthesize_population(&spec(&[("population.patients", "2"), ("population.caregivers", "2")]));
        let patients: BTreeSet<_> = r.ids_of(NodeClass::Patient).collect();
        let paired: BTreeSet<_> = r.nodes.iter().filter_map(|n| n.paired_patient).collect();
        assert_eq!(patients, paired);
        assert_eq!(r.count(NodeClass::Caregiver), 2);
    }

    #[test]
    fn pairing_round_robin_otherwise() {
        let r = synthesize_population(&spec(&[("population.patients", "2"), ("population.caregivers", "5")]));
        let paired: Vec<_> = r.nodes.iter().filter_map(|n| n.paired_patient).collect();
        assert_eq!(paired, vec![0, 1, 0, 1, 0]);
    }
}
