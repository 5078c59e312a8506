//! Permissionless mode: anyone may submit transactions, but only attested
//! nodes forge and only registered users' transactions are included.

use attest_chain::ledger::LedgerRecord;
use attest_chain::sim::{run_scenario, ScenarioConfig};

fn main() {
    let config = ScenarioConfig::from_text(include_str!("../scenarios/honest-subset.json")).unwrap();
    for user in &config.users {
        println!("user {} registered {}", user.name, user.registered);
    }
    let outcome = run_scenario(&config).unwrap();
    let ledger = outcome.universe.ledger();
    for block in ledger.blocks() {
        let txs = block.records.iter().filter(|r| matches!(r, LedgerRecord::Transaction(_))).count();
        let paid: Vec<String> = block
            .records
            .iter()
            .filter_map(|r| match r {
                LedgerRecord::Remuneration { node_id, tx_count } => Some(format!("{node_id} x{tx_count}")),
                _ => None,
            })
            .collect();
        if txs > 0 || !paid.is_empty() {
            println!("block {} by {}: {txs} transactions, remuneration {paid:?}", block.height, block.forger);
        }
    }
    println!("pending after run: {}", outcome.universe.pending_transactions().len());
}
