//! An adversary clones one node's configuration onto others. Once fewer
//! than half the nodes run distinct configurations the consortium raises
//! the required majority from 51 to 70.

use attest_chain::ledger::LedgerRecord;
use attest_chain::sim::{run_scenario, ScenarioConfig};

fn main() {
    let text = include_str!("../scenarios/clone-attack.json");
    let config = ScenarioConfig::from_text(text).unwrap();
    let outcome = run_scenario(&config).unwrap();
    println!("threshold {}", config.diversity_threshold);
    for r in &outcome.reports {
        println!("epoch {} diversity {:.2} majority {}", r.epoch, r.diversity, r.majority);
    }
    for record in outcome.universe.ledger().records() {
        if let LedgerRecord::Governance { epoch, distinct_configs, node_count, majority } = record {
            println!("ledger: epoch {epoch} {distinct_configs}/{node_count} distinct -> majority {majority}");
        }
    }
}
