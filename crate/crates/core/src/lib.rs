//! Remote-attestation roles, appraisal and conveyance flows, plus a
//! deterministic simulator of a consortium blockchain whose consensus
//! participation is gated on attestation verdicts.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory:
//!
//! ```bash
//! cargo run -p attest-chain --example basic_appraisal
//! cargo run -p attest-chain --example consortium_simulation
//! ```

pub mod model;
pub mod attester;
pub mod verifier;
pub mod endorsement;
pub mod ledger;
pub mod conveyance;
pub mod sim;
pub mod cli;
