//! Ledger-anchored retention of supply-chain endorsements.
//!
//! A manufacturer stores its verification objects (endorsement, signing
//! certificate, root certificate) in a content-addressed repository, signs
//! a record carrying their Merkle root and addresses, and notarizes that
//! record on a ledger. Verification later needs only the ledger and the
//! repository, never the manufacturer.

pub mod merkle;
pub mod record;
pub mod store;

pub use merkle::{merkle_prove, merkle_root, merkle_verify, MerkleError, MerkleProof};
pub use record::{
    register_endorsement, verification_objects, verify_product, Certificate, EndorsementRecord, ObjectRef,
    ProductCheck, ProductVerification, RegistrationError,
};
pub use store::{ContentStore, StoreError};
