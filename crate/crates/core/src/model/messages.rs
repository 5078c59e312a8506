//! Role messages: evidence, endorsements and attestation results.
//!
//! Each message has a signing image (type tag plus every field except the
//! signature) and a full encoding (signing image followed by the
//! length-prefixed signature). The full encoding is what goes on the wire
//! and into files.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::canonical::{Canonical, DecodeError, Decoder, Encoder};
use super::claims::ClaimSet;
use super::crypto::{Digest, PublicKey, Signed, SigningKey};
use super::identity::{EntityId, Nonce, Tick};

pub const TAG_EVIDENCE: u8 = b'E';
pub const TAG_ENDORSEMENT: u8 = b'N';
pub const TAG_RESULT: u8 = b'R';

/// Maximum nesting depth of component evidence.
pub const MAX_COMPONENT_DEPTH: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MessageError {
    #[error("component evidence requires a lead assertion")]
    MissingLeadAssertion,
    #[error("component nesting depth {0} exceeds {MAX_COMPONENT_DEPTH}")]
    TooDeep(usize),
    #[error("layer record at position {position} has index {index}")]
    LayerIndex { position: usize, index: u64 },
    #[error("product id must be non-empty")]
    EmptyProduct,
    #[error("verdict and reasons disagree: {0}")]
    VerdictReasons(&'static str),
    #[error("signing key does not match the declared identity")]
    KeyMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Compliant,
    NonCompliant,
    Unknown,
}

impl Verdict {
    fn tag(self) -> u8 {
        match self {
            Verdict::Compliant => 0,
            Verdict::NonCompliant => 1,
            Verdict::Unknown => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, DecodeError> {
        Ok(match tag {
            0 => Verdict::Compliant,
            1 => Verdict::NonCompliant,
            2 => Verdict::Unknown,
            tag => return Err(DecodeError::BadTag { what: "verdict", tag }),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Compliant => "compliant",
            Verdict::NonCompliant => "non_compliant",
            Verdict::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One entry in a layered-attestation chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub index: u64,
    /// Digest of the layer's code image.
    pub measurement: Digest,
    /// Digest of the secret derived for this layer; identifies the layer.
    pub layer_key_id: Digest,
}

impl Canonical for LayerRecord {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.u64(self.index).encode(&self.measurement).encode(&self.layer_key_id);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(LayerRecord { index: dec.u64()?, measurement: dec.decode()?, layer_key_id: dec.decode()? })
    }
}

fn check_layer_indices(chain: &[LayerRecord]) -> Result<(), MessageError> {
    for (position, rec) in chain.iter().enumerate() {
        if rec.index != position as u64 {
            return Err(MessageError::LayerIndex { position, index: rec.index });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub attester: EntityId,
    pub target_claims: ClaimSet,
    pub nonce_echo: Nonce,
    pub created_at: Tick,
    pub layer_chain: Option<Vec<LayerRecord>>,
    pub components: Option<Vec<Evidence>>,
    pub lead_assertion: Option<bool>,
    #[serde(with = "crate::model::hex_bytes")]
    pub signature: Vec<u8>,
}

impl Evidence {
    /// Unsigned evidence; call [`Evidence::sign`] to finish it.
    pub fn unsigned(attester: EntityId, target_claims: ClaimSet, nonce_echo: Nonce, created_at: Tick) -> Self {
        Evidence {
            attester,
            target_claims,
            nonce_echo,
            created_at,
            layer_chain: None,
            components: None,
            lead_assertion: None,
            signature: Vec::new(),
        }
    }

    pub fn with_layers(mut self, chain: Vec<LayerRecord>) -> Self {
        self.layer_chain = Some(chain);
        self
    }

    pub fn with_components(mut self, components: Vec<Evidence>) -> Self {
        self.components = Some(components);
        self.lead_assertion = Some(true);
        self
    }

    pub fn sign(mut self, key: &SigningKey) -> Result<Self, MessageError> {
        if key.public_key() != self.attester.public_key {
            return Err(MessageError::KeyMismatch);
        }
        self.check_structure()?;
        self.signature = key.sign(&self.signing_image());
        Ok(self)
    }

    pub fn check_structure(&self) -> Result<(), MessageError> {
        if self.components.as_ref().is_some_and(|c| !c.is_empty()) && self.lead_assertion.is_none() {
            return Err(MessageError::MissingLeadAssertion);
        }
        let depth = self.depth();
        if depth > MAX_COMPONENT_DEPTH {
            return Err(MessageError::TooDeep(depth));
        }
        if let Some(chain) = &self.layer_chain {
            check_layer_indices(chain)?;
        }
        Ok(())
    }

    /// 0 for evidence without components.
    pub fn depth(&self) -> usize {
        match &self.components {
            Some(c) if !c.is_empty() => 1 + c.iter().map(Evidence::depth).max().unwrap_or(0),
            _ => 0,
        }
    }

    pub fn components(&self) -> &[Evidence] {
        self.components.as_deref().unwrap_or(&[])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_canonical_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        Self::from_canonical_bytes(bytes)
    }

    fn encode_body(&self, enc: &mut Encoder) {
        enc.u8(TAG_EVIDENCE)
            .encode(&self.attester)
            .encode(&self.target_claims)
            .encode(&self.nonce_echo)
            .u64(self.created_at)
            .option(self.layer_chain.as_ref(), |e, chain| {
                e.list(chain, |e, r| {
                    e.encode(r);
                });
            })
            .option(self.components.as_ref(), |e, comps| {
                e.list(comps, |e, c| {
                    e.encode(c);
                });
            })
            .option(self.lead_assertion.as_ref(), |e, b| {
                e.bool(*b);
            });
    }

    fn decode_at_depth(dec: &mut Decoder<'_>, depth: usize) -> Result<Self, DecodeError> {
        dec.expect_tag("evidence", TAG_EVIDENCE)?;
        let attester = dec.decode()?;
        let target_claims = dec.decode()?;
        let nonce_echo = dec.decode()?;
        let created_at = dec.u64()?;
        let layer_chain = dec.option(|d| d.list(|d| d.decode()))?;
        let components = dec.option(|d| {
            d.list(|d| {
                if depth >= MAX_COMPONENT_DEPTH {
                    return Err(DecodeError::Invalid(MessageError::TooDeep(depth + 1).to_string()));
                }
                Evidence::decode_at_depth(d, depth + 1)
            })
        })?;
        let lead_assertion = dec.option(|d| d.bool())?;
        let signature = dec.bytes()?;
        let ev = Evidence {
            attester,
            target_claims,
            nonce_echo,
            created_at,
            layer_chain,
            components,
            lead_assertion,
            signature,
        };
        ev.check_structure().map_err(|e| DecodeError::Invalid(e.to_string()))?;
        Ok(ev)
    }
}

impl Canonical for Evidence {
    fn encode_to(&self, enc: &mut Encoder) {
        self.encode_body(enc);
        enc.bytes(&self.signature);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Evidence::decode_at_depth(dec, 0)
    }
}

impl Signed for Evidence {
    fn signing_image(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_body(&mut enc);
        enc.finish()
    }

    fn signature(&self) -> &[u8] {
        &self.signature
    }

    fn signer(&self) -> &PublicKey {
        &self.attester.public_key
    }
}

/// Supply-chain reference values ("known good values") for a product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endorsement {
    pub endorser: EntityId,
    pub product_id: String,
    pub reference_claims: ClaimSet,
    /// Static trust property that needs no runtime reporting.
    pub intrinsic: bool,
    pub issued_at: Tick,
    #[serde(with = "crate::model::hex_bytes")]
    pub signature: Vec<u8>,
}

impl Endorsement {
    pub fn issue(
        endorser: &EntityId,
        key: &SigningKey,
        product_id: impl Into<String>,
        reference_claims: ClaimSet,
        intrinsic: bool,
        issued_at: Tick,
    ) -> Result<Self, MessageError> {
        let product_id = product_id.into();
        if product_id.is_empty() {
            return Err(MessageError::EmptyProduct);
        }
        if key.public_key() != endorser.public_key {
            return Err(MessageError::KeyMismatch);
        }
        let mut e = Endorsement {
            endorser: endorser.clone(),
            product_id,
            reference_claims,
            intrinsic,
            issued_at,
            signature: Vec::new(),
        };
        e.signature = key.sign(&e.signing_image());
        Ok(e)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_canonical_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        Self::from_canonical_bytes(bytes)
    }

    fn encode_body(&self, enc: &mut Encoder) {
        enc.u8(TAG_ENDORSEMENT)
            .encode(&self.endorser)
            .str(&self.product_id)
            .encode(&self.reference_claims)
            .bool(self.intrinsic)
            .u64(self.issued_at);
    }
}

impl Canonical for Endorsement {
    fn encode_to(&self, enc: &mut Encoder) {
        self.encode_body(enc);
        enc.bytes(&self.signature);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.expect_tag("endorsement", TAG_ENDORSEMENT)?;
        let e = Endorsement {
            endorser: dec.decode()?,
            product_id: dec.string()?,
            reference_claims: dec.decode()?,
            intrinsic: dec.bool()?,
            issued_at: dec.u64()?,
            signature: dec.bytes()?,
        };
        if e.product_id.is_empty() {
            return Err(DecodeError::Invalid(MessageError::EmptyProduct.to_string()));
        }
        Ok(e)
    }
}

impl Signed for Endorsement {
    fn signing_image(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_body(&mut enc);
        enc.finish()
    }

    fn signature(&self) -> &[u8] {
        &self.signature
    }

    fn signer(&self) -> &PublicKey {
        &self.endorser.public_key
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttestationResult {
    pub verifier: EntityId,
    pub attester: EntityId,
    pub verdict: Verdict,
    pub policy_digest: Digest,
    pub appraised_nonce: Nonce,
    /// Failed rule identifiers; empty exactly when compliant.
    pub reasons: Vec<String>,
    pub created_at: Tick,
    #[serde(with = "crate::model::hex_bytes")]
    pub signature: Vec<u8>,
}

fn check_verdict_reasons(verdict: Verdict, reasons: &[String]) -> Result<(), MessageError> {
    match (verdict, reasons.is_empty()) {
        (Verdict::Compliant, false) => Err(MessageError::VerdictReasons("compliant with reasons")),
        (Verdict::NonCompliant | Verdict::Unknown, true) => {
            Err(MessageError::VerdictReasons("non-compliant without reasons"))
        }
        _ => Ok(()),
    }
}

impl AttestationResult {
    #[allow(clippy::too_many_arguments)]
    pub fn issue(
        verifier: &EntityId,
        key: &SigningKey,
        attester: EntityId,
        verdict: Verdict,
        policy_digest: Digest,
        appraised_nonce: Nonce,
        reasons: Vec<String>,
        created_at: Tick,
    ) -> Result<Self, MessageError> {
        check_verdict_reasons(verdict, &reasons)?;
        if key.public_key() != verifier.public_key {
            return Err(MessageError::KeyMismatch);
        }
        let mut r = AttestationResult {
            verifier: verifier.clone(),
            attester,
            verdict,
            policy_digest,
            appraised_nonce,
            reasons,
            created_at,
            signature: Vec::new(),
        };
        r.signature = key.sign(&r.signing_image());
        Ok(r)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_canonical_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        Self::from_canonical_bytes(bytes)
    }

    fn encode_body(&self, enc: &mut Encoder) {
        enc.u8(TAG_RESULT)
            .encode(&self.verifier)
            .encode(&self.attester)
            .u8(self.verdict.tag())
            .encode(&self.policy_digest)
            .encode(&self.appraised_nonce)
            .list(&self.reasons, |e, r| {
                e.str(r);
            })
            .u64(self.created_at);
    }
}

impl Canonical for AttestationResult {
    fn encode_to(&self, enc: &mut Encoder) {
        self.encode_body(enc);
        enc.bytes(&self.signature);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.expect_tag("attestation result", TAG_RESULT)?;
        let r = AttestationResult {
            verifier: dec.decode()?,
            attester: dec.decode()?,
            verdict: Verdict::from_tag(dec.u8()?)?,
            policy_digest: dec.decode()?,
            appraised_nonce: dec.decode()?,
            reasons: dec.list(|d| d.string())?,
            created_at: dec.u64()?,
            signature: dec.bytes()?,
        };
        check_verdict_reasons(r.verdict, &r.reasons).map_err(|e| DecodeError::Invalid(e.to_string()))?;
        Ok(r)
    }
}

impl Signed for AttestationResult {
    fn signing_image(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_body(&mut enc);
        enc.finish()
    }

    fn signature(&self) -> &[u8] {
        &self.signature
    }

    fn signer(&self) -> &PublicKey {
        &self.verifier.public_key
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::claims::ClaimValue;
    use crate::model::identity::{KeyPair, Role};

    fn attester() -> KeyPair {
        KeyPair::derive(3, Role::Attester, "a").unwrap()
    }

    fn leaf(nonce_byte: u8) -> Evidence {
        let kp = attester();
        let claims = ClaimSet::new().with("x", ClaimValue::Integer(1)).unwrap();
        Evidence::unsigned(kp.id.clone(), claims, Nonce { value: [nonce_byte; 16], issued_at: 1 }, 2)
            .sign(&kp.key)
            .unwrap()
    }

    #[test]
    fn evidence_round_trip_and_signature() {
        let ev = leaf(1);
        assert!(ev.verify());
        let back = Evidence::from_bytes(&ev.to_bytes()).unwrap();
        assert_eq!(back, ev);
        assert!(back.verify());
    }

    #[test]
    fn signature_excluded_from_signing_image() {
        let ev = leaf(1);
        let mut other = ev.clone();
        other.signature = vec![0; 64];
        assert_eq!(ev.signing_image(), other.signing_image());
        assert_ne!(ev.to_bytes(), other.to_bytes());
    }

    #[test]
    fn nesting_cap() {
        let kp = attester();
        let mut ev = leaf(0);
        for depth in 1..=MAX_COMPONENT_DEPTH {
            ev = Evidence::unsigned(kp.id.clone(), ClaimSet::new(), ev.nonce_echo, 2)
                .with_components(vec![ev])
                .sign(&kp.key)
                .unwrap();
            assert_eq!(ev.depth(), depth);
            assert!(Evidence::from_bytes(&ev.to_bytes()).is_ok());
        }
        let too_deep = Evidence::unsigned(kp.id.clone(), ClaimSet::new(), ev.nonce_echo, 2).with_components(vec![ev]);
        assert_eq!(too_deep.clone().sign(&kp.key), Err(MessageError::TooDeep(5)));
        // Bypass the signer and check the decoder refuses it as well.
        let mut forced = too_deep;
        forced.signature = vec![0; 64];
        assert!(Evidence::from_bytes(&forced.to_bytes()).is_err());
    }

    #[test]
    fn components_need_lead_assertion() {
        let kp = attester();
        let mut ev = Evidence::unsigned(kp.id.clone(), ClaimSet::new(), leaf(0).nonce_echo, 2);
        ev.components = Some(vec![leaf(2)]);
        assert_eq!(ev.sign(&kp.key), Err(MessageError::MissingLeadAssertion));
    }

    #[test]
    fn result_verdict_reason_invariant() {
        let v = KeyPair::derive(3, Role::Verifier, "v").unwrap();
        let nonce = Nonce { value: [1; 16], issued_at: 0 };
        let bad = AttestationResult::issue(&v.id, &v.key, attester().id, Verdict::Compliant, Digest::ZERO, nonce, vec!["x".into()], 1);
        assert!(bad.is_err());
        let bad = AttestationResult::issue(&v.id, &v.key, attester().id, Verdict::Unknown, Digest::ZERO, nonce, vec![], 1);
        assert!(bad.is_err());
        let ok = AttestationResult::issue(&v.id, &v.key, attester().id, Verdict::NonCompliant, Digest::ZERO, nonce, vec!["nonce".into()], 1).unwrap();
        assert!(ok.verify());
        assert_eq!(AttestationResult::from_bytes(&ok.to_bytes()).unwrap(), ok);
    }

    #[test]
    fn endorsement_requires_product() {
        let e = KeyPair::derive(3, Role::Endorser, "vendor").unwrap();
        assert_eq!(
            Endorsement::issue(&e.id, &e.key, "", ClaimSet::new(), false, 0),
            Err(MessageError::EmptyProduct)
        );
        let ok = Endorsement::issue(&e.id, &e.key, "fw", ClaimSet::new(), true, 0).unwrap();
        assert!(ok.verify());
        assert!(!ok.verify_with(&attester().id.public_key));
    }
}
