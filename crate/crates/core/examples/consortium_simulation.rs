//! Runs a bundled scenario (or one given on the command line) and prints
//! per-epoch appraisal outcomes and the resulting ledger.
//!
//! cargo run --example consortium_simulation -- scenarios/tampered-node.json

use attest_chain::sim::{run_scenario, ScenarioConfig};

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/tampered-node.json").to_string());
    let config = match std::fs::read_to_string(&path).map_err(|e| e.to_string()).and_then(|t| {
        ScenarioConfig::from_text(&t).map_err(|e| e.to_string())
    }) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{path}: {e}");
            std::process::exit(2);
        }
    };
    let outcome = run_scenario(&config).unwrap();
    for report in &outcome.reports {
        println!("epoch {} validator {}", report.epoch, report.validator.as_deref().unwrap_or("none (halt)"));
        for node in &report.nodes {
            println!(
                "  {:<4} domain {:<13} consortium {:<13} {:?}",
                node.node_id,
                node.domain_verdict.as_str(),
                node.consortium_verdict.as_str(),
                node.reasons
            );
        }
    }
    print!("{}", outcome.universe.ledger().render_text());
}
