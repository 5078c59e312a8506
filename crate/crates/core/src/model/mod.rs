//! Identities, claims, policies, role messages and their canonical encoding.

pub mod canonical;
pub mod claims;
pub mod crypto;
pub mod export;
pub mod identity;
pub mod messages;
pub mod policy;

pub use canonical::{Canonical, DecodeError, Decoder, Encoder};
pub use claims::{ClaimError, ClaimSet, ClaimValue, GeoPoint};
pub use crypto::{digest, keyed_hash, verify_signature, Digest, KeyError, PublicKey, Signed, SigningKey};
pub use identity::{new_nonce, universe_rng, EntityId, KeyPair, Nonce, Role, Tick, UniverseRng};
pub use messages::{AttestationResult, Endorsement, Evidence, LayerRecord, MessageError, Verdict};
pub use policy::{EvidencePolicy, GeoFence, PolicyError, PolicyRule, ResultPolicy, RuleKind};

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

pub(crate) mod hex_array {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(bytes: &[u8; N], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[u8; N], D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; N];
        hex::decode_to_slice(s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}
