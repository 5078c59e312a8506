use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::canonical::{Canonical, DecodeError, Decoder, Encoder};
use super::crypto::{digest_parts, PublicKey, SigningKey};

/// Logical time in ticks.
pub type Tick = u64;

/// Seeded random source shared by one simulation universe.
pub type UniverseRng = ChaCha20Rng;

pub fn universe_rng(seed: u64) -> UniverseRng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub const NONCE_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Attester,
    Verifier,
    RelyingParty,
    Endorser,
    Owner,
}

impl Role {
    pub fn tag(self) -> u8 {
        match self {
            Role::Attester => 0,
            Role::Verifier => 1,
            Role::RelyingParty => 2,
            Role::Endorser => 3,
            Role::Owner => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Role> {
        Some(match tag {
            0 => Role::Attester,
            1 => Role::Verifier,
            2 => Role::RelyingParty,
            3 => Role::Endorser,
            4 => Role::Owner,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Attester => "attester",
            Role::Verifier => "verifier",
            Role::RelyingParty => "relying_party",
            Role::Endorser => "endorser",
            Role::Owner => "owner",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "attester" => Role::Attester,
            "verifier" => Role::Verifier,
            "relying_party" | "relying-party" | "rp" => Role::RelyingParty,
            "endorser" => Role::Endorser,
            "owner" => Role::Owner,
            other => return Err(IdentityError::UnknownRole(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("entity name must be non-empty")]
    EmptyName,
    #[error("entity public key must be non-empty")]
    EmptyKey,
    #[error("unknown role {0:?}")]
    UnknownRole(String),
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId {
    pub role: Role,
    pub name: String,
    pub public_key: PublicKey,
}

impl EntityId {
    pub fn new(role: Role, name: impl Into<String>, public_key: PublicKey) -> Result<Self, IdentityError> {
        let name = name.into();
        if name.is_empty() {
            return Err(IdentityError::EmptyName);
        }
        if public_key.is_empty() {
            return Err(IdentityError::EmptyKey);
        }
        Ok(EntityId { role, name, public_key })
    }
}

impl fmt::Debug for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.role, self.name)
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.role, self.name)
    }
}

impl Canonical for EntityId {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.u8(self.role.tag()).str(&self.name).encode(&self.public_key);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let tag = dec.u8()?;
        let role = Role::from_tag(tag).ok_or(DecodeError::BadTag { what: "role", tag })?;
        let name = dec.string()?;
        let public_key = dec.decode()?;
        EntityId::new(role, name, public_key).map_err(|e| DecodeError::Invalid(e.to_string()))
    }
}

/// An identity together with its signing key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub id: EntityId,
    pub key: SigningKey,
}

impl KeyPair {
    pub fn new(role: Role, name: impl Into<String>, key: SigningKey) -> Result<Self, IdentityError> {
        let id = EntityId::new(role, name, key.public_key())?;
        Ok(KeyPair { id, key })
    }

    /// Key derived from `(seed, role, name)`, independent of call order.
    pub fn derive(seed: u64, role: Role, name: &str) -> Result<Self, IdentityError> {
        Self::new(role, name, derive_signing_key(seed, role, name, "identity"))
    }

    pub fn generate(role: Role, name: impl Into<String>, rng: &mut impl RngCore) -> Result<Self, IdentityError> {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::new(role, name, SigningKey::from_seed(seed))
    }
}

pub fn derive_signing_key(seed: u64, role: Role, name: &str, purpose: &str) -> SigningKey {
    let d = digest_parts(&[
        b"attest-chain/key/v1",
        &seed.to_be_bytes(),
        &[role.tag()],
        &(name.len() as u32).to_be_bytes(),
        name.as_bytes(),
        purpose.as_bytes(),
    ]);
    SigningKey::from_seed(d.0)
}

pub fn derive_secret(seed: u64, name: &str, purpose: &str) -> [u8; 32] {
    digest_parts(&[
        b"attest-chain/secret/v1",
        &seed.to_be_bytes(),
        &(name.len() as u32).to_be_bytes(),
        name.as_bytes(),
        purpose.as_bytes(),
    ])
    .0
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Nonce {
    #[serde(with = "crate::model::hex_array")]
    pub value: [u8; NONCE_LEN],
    pub issued_at: Tick,
}

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce({}@{})", hex::encode(self.value), self.issued_at)
    }
}

impl Canonical for Nonce {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.fixed(&self.value).u64(self.issued_at);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Nonce { value: dec.array()?, issued_at: dec.u64()? })
    }
}

/// Draws 16 fresh bytes from `rng`, stamped with `clock`.
pub fn new_nonce(clock: Tick, rng: &mut impl RngCore) -> Nonce {
    let mut value = [0u8; NONCE_LEN];
    loop {
        rng.fill_bytes(&mut value);
        if value != [0u8; NONCE_LEN] {
            return Nonce { value, issued_at: clock };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn nonce_carries_clock() {
        let mut rng = universe_rng(1);
        assert_eq!(new_nonce(42, &mut rng).issued_at, 42);
    }

    #[test]
    fn nonces_do_not_collide() {
        let mut rng = universe_rng(9);
        let mut seen = HashSet::new();
        for t in 0..10_000 {
            assert!(seen.insert(new_nonce(t, &mut rng).value));
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let (mut a, mut b) = (universe_rng(5), universe_rng(5));
        for t in 0..50 {
            assert_eq!(new_nonce(t, &mut a), new_nonce(t, &mut b));
        }
    }

    #[test]
    fn entity_validation() {
        assert_eq!(
            EntityId::new(Role::Verifier, "", PublicKey(vec![1])),
            Err(IdentityError::EmptyName)
        );
        assert_eq!(
            EntityId::new(Role::Verifier, "v", PublicKey(vec![])),
            Err(IdentityError::EmptyKey)
        );
    }

    #[test]
    fn derived_keys_depend_on_every_input() {
        let a = KeyPair::derive(1, Role::Attester, "n1").unwrap();
        assert_eq!(a, KeyPair::derive(1, Role::Attester, "n1").unwrap());
        assert_ne!(a.id.public_key, KeyPair::derive(2, Role::Attester, "n1").unwrap().id.public_key);
        assert_ne!(a.id.public_key, KeyPair::derive(1, Role::Verifier, "n1").unwrap().id.public_key);
        assert_ne!(a.id.public_key, KeyPair::derive(1, Role::Attester, "n2").unwrap().id.public_key);
    }
}
