//! Deterministic consortium blockchain simulator.
//!
//! Nodes carry a local attester and verifier; each member domain runs a
//! domain verifier and the consortium runs its own. Validators are drawn
//! by stake among nodes whose latest consortium result is compliant,
//! fresh and inside the geo-fence. Governance raises the majority
//! parameter when node configurations become too homogeneous.

pub mod scenario;
pub mod universe;

pub use scenario::{apply_fault, run_scenario, Mutation, ScenarioConfig, ScenarioError, SimulationOutcome};
pub use universe::{
    audit_digest, ConfigError, ConsortiumConfig, Domain, EpochReport, NoEligible, Node, NodeReport, Universe,
};
