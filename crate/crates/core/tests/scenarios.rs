//! Bundled scenarios against their golden reports and ledger tips.
//!
//! Regenerate goldens with `UPDATE_GOLDENS=1 cargo test --test scenarios`.

use std::fs;
use std::path::{Path, PathBuf};

use attest_chain::sim::{run_scenario, ScenarioConfig};

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn bundled() -> Vec<(String, ScenarioConfig)> {
    let mut out: Vec<_> = fs::read_dir(scenario_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| {
            let stem = p.file_stem().unwrap().to_string_lossy().into_owned();
            (stem, ScenarioConfig::from_text(&fs::read_to_string(&p).unwrap()).unwrap())
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn golden_text(config: &ScenarioConfig) -> String {
    let outcome = run_scenario(config).unwrap();
    format!("{}\ntip {}\n", outcome.reports_text().trim_end(), outcome.universe.ledger().tip_digest())
}

#[test]
fn scenarios_match_goldens() {
    let update = std::env::var_os("UPDATE_GOLDENS").is_some();
    let dir = scenario_dir().join("golden");
    let scenarios = bundled();
    assert!(scenarios.len() >= 5);
    for (name, config) in scenarios {
        let path = dir.join(format!("{name}.golden"));
        let actual = golden_text(&config);
        if update {
            fs::write(&path, &actual).unwrap();
            continue;
        }
        let expected = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden {}", path.display()));
        assert_eq!(actual, expected, "scenario {name} drifted from its golden");
    }
}

#[test]
fn reruns_are_byte_identical() {
    for (name, config) in bundled() {
        let a = run_scenario(&config).unwrap();
        let b = run_scenario(&config).unwrap();
        assert_eq!(a.reports_text(), b.reports_text(), "{name}");
        assert_eq!(a.universe.ledger().export_canonical(), b.universe.ledger().export_canonical(), "{name}");
    }
}

#[test]
fn scenario_text_round_trips() {
    for (name, config) in bundled() {
        let again = ScenarioConfig::from_text(&config.to_text()).unwrap();
        assert_eq!(golden_text(&config), golden_text(&again), "{name}");
    }
}

#[test]
fn clone_attack_raises_the_majority_after_diversity_drops() {
    let (_, config) = bundled().into_iter().find(|(n, _)| n == "clone-attack").unwrap();
    let outcome = run_scenario(&config).unwrap();
    let majority: Vec<u8> = outcome.reports.iter().map(|r| r.majority).collect();
    let diversity: Vec<f64> = outcome.reports.iter().map(|r| r.diversity).collect();
    assert_eq!(majority, [51, 51, 51, 70, 70]);
    assert_eq!(diversity, [1.0, 0.75, 0.5, 0.25, 0.25]);
    outcome.universe.ledger().verify().unwrap();
}

#[test]
fn different_seed_changes_the_ledger() {
    let (_, mut config) = bundled().into_iter().find(|(n, _)| n == "healthy-4nodes").unwrap();
    let a = run_scenario(&config).unwrap().universe.ledger().tip_digest();
    config.seed += 1;
    let b = run_scenario(&config).unwrap().universe.ledger().tip_digest();
    assert_ne!(a, b);
}
