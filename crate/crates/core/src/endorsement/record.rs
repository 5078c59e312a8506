use std::fmt;

use thiserror::Error;

use super::merkle::merkle_root;
use super::store::{ContentStore, StoreError};
use crate::ledger::{Ledger, LedgerRecord};
use crate::model::canonical::{Canonical, DecodeError, Decoder, Encoder};
use crate::model::{digest, ClaimSet, ClaimValue, Digest, Endorsement, EntityId, KeyPair, PublicKey, Signed, Tick};

pub const TAG_RECORD: u8 = b'D';
pub const TAG_CERT: u8 = b'C';

pub const LABEL_ENDORSEMENT: &str = "endorsement";
pub const LABEL_MANUFACTURER_CERT: &str = "manufacturer_cert";
pub const LABEL_ROOT_CERT: &str = "root_cert";
pub const MANDATORY_LABELS: [&str; 3] = [LABEL_ENDORSEMENT, LABEL_MANUFACTURER_CERT, LABEL_ROOT_CERT];

/// Reference claim in the endorsement object naming the product digest.
pub const PRODUCT_DIGEST_CLAIM: &str = "product.digest";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistrationError {
    #[error("missing mandatory verification object {0:?}")]
    MissingLabel(&'static str),
    #[error("product id must be non-empty")]
    EmptyProduct,
}

/// Minimal certificate binding a subject key to an issuer signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject: EntityId,
    pub issuer: EntityId,
    pub signature: Vec<u8>,
}

impl Certificate {
    pub fn issue(issuer: &KeyPair, subject: EntityId) -> Self {
        let mut cert = Certificate { subject, issuer: issuer.id.clone(), signature: Vec::new() };
        cert.signature = issuer.key.sign(&cert.signing_image());
        cert
    }

    pub fn self_signed(keys: &KeyPair) -> Self {
        Self::issue(keys, keys.id.clone())
    }
}

impl Signed for Certificate {
    fn signing_image(&self) -> Vec<u8> {
        let mut enc = Encoder::with_tag(TAG_CERT);
        enc.encode(&self.subject).encode(&self.issuer);
        enc.finish()
    }

    fn signature(&self) -> &[u8] {
        &self.signature
    }

    fn signer(&self) -> &PublicKey {
        &self.issuer.public_key
    }
}

impl Canonical for Certificate {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.fixed(&self.signing_image()).bytes(&self.signature);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.expect_tag("certificate", TAG_CERT)?;
        Ok(Certificate { subject: dec.decode()?, issuer: dec.decode()?, signature: dec.bytes()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectRef {
    pub label: String,
    pub content_address: Digest,
}

/// Merkle-rooted summary of a manufacturer's verification objects,
/// notarized on the endorsements ledger. Content addresses act as the
/// pointers to where each object can be fetched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndorsementRecord {
    pub manufacturer: EntityId,
    pub product_id: String,
    pub merkle_root: Digest,
    pub object_refs: Vec<ObjectRef>,
    pub registered_at: Tick,
    pub signature: Vec<u8>,
}

impl EndorsementRecord {
    fn encode_body(&self, enc: &mut Encoder) {
        enc.u8(TAG_RECORD)
            .encode(&self.manufacturer)
            .str(&self.product_id)
            .encode(&self.merkle_root)
            .list(&self.object_refs, |e, r| {
                e.str(&r.label).encode(&r.content_address);
            })
            .u64(self.registered_at);
    }

    pub fn object(&self, label: &str) -> Option<&ObjectRef> {
        self.object_refs.iter().find(|r| r.label == label)
    }
}

impl Signed for EndorsementRecord {
    fn signing_image(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_body(&mut enc);
        enc.finish()
    }

    fn signature(&self) -> &[u8] {
        &self.signature
    }

    fn signer(&self) -> &PublicKey {
        &self.manufacturer.public_key
    }
}

impl Canonical for EndorsementRecord {
    fn encode_to(&self, enc: &mut Encoder) {
        self.encode_body(enc);
        enc.bytes(&self.signature);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.expect_tag("endorsement record", TAG_RECORD)?;
        Ok(EndorsementRecord {
            manufacturer: dec.decode()?,
            product_id: dec.string()?,
            merkle_root: dec.decode()?,
            object_refs: dec.list(|d| Ok(ObjectRef { label: d.string()?, content_address: d.decode()? }))?,
            registered_at: dec.u64()?,
            signature: dec.bytes()?,
        })
    }
}

/// The three mandatory verification objects for `product_bytes`: the
/// signed endorsement, the manufacturer certificate issued by `root_ca`,
/// and the self-signed root certificate.
pub fn verification_objects(
    root_ca: &KeyPair,
    manufacturer: &KeyPair,
    product_id: &str,
    product_bytes: &[u8],
    clock: Tick,
) -> Vec<(String, Vec<u8>)> {
    let claims = ClaimSet::new()
        .with(PRODUCT_DIGEST_CLAIM, ClaimValue::Digest(digest(product_bytes)))
        .expect("constant key");
    let endorsement = Endorsement::issue(&manufacturer.id, &manufacturer.key, product_id, claims, true, clock)
        .expect("manufacturer keys are consistent");
    vec![
        (LABEL_ENDORSEMENT.to_string(), endorsement.to_bytes()),
        (LABEL_MANUFACTURER_CERT.to_string(), Certificate::issue(root_ca, manufacturer.id.clone()).to_canonical_bytes()),
        (LABEL_ROOT_CERT.to_string(), Certificate::self_signed(root_ca).to_canonical_bytes()),
    ]
}

/// Stores each object content-addressed, builds and signs the record over
/// their Merkle root, and notarizes it in a new ledger block.
pub fn register_endorsement(
    manufacturer: &KeyPair,
    product_id: &str,
    objects: &[(String, Vec<u8>)],
    store: &mut ContentStore,
    ledger: &mut Ledger,
    clock: Tick,
) -> Result<EndorsementRecord, RegistrationError> {
    if product_id.is_empty() {
        return Err(RegistrationError::EmptyProduct);
    }
    for label in MANDATORY_LABELS {
        if !objects.iter().any(|(l, _)| l == label) {
            return Err(RegistrationError::MissingLabel(label));
        }
    }
    let object_refs: Vec<ObjectRef> = objects
        .iter()
        .map(|(label, bytes)| ObjectRef { label: label.clone(), content_address: store.put(bytes.clone()) })
        .collect();
    let leaves: Vec<Digest> = object_refs.iter().map(|r| r.content_address).collect();
    let mut record = EndorsementRecord {
        manufacturer: manufacturer.id.clone(),
        product_id: product_id.to_string(),
        merkle_root: merkle_root(&leaves).expect("mandatory labels make the list non-empty"),
        object_refs,
        registered_at: clock,
        signature: Vec::new(),
    };
    record.signature = manufacturer.key.sign(&record.signing_image());
    ledger.append(vec![LedgerRecord::Endorsement(record.clone())], manufacturer.id.name.clone(), clock);
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProductCheck {
    LedgerMismatch,
    LedgerIntegrity,
    ObjectMissing(String),
    ObjectCorrupt(String),
    RootMismatch,
    CertChain,
    Signature,
    EndorsementSignature,
    ProductMismatch,
    DigestMismatch,
}

impl ProductCheck {
    pub fn code(&self) -> &'static str {
        match self {
            ProductCheck::LedgerMismatch => "ledger_mismatch",
            ProductCheck::LedgerIntegrity => "ledger_integrity",
            ProductCheck::ObjectMissing(_) => "object_missing",
            ProductCheck::ObjectCorrupt(_) => "object_corrupt",
            ProductCheck::RootMismatch => "root_mismatch",
            ProductCheck::CertChain => "cert_chain",
            ProductCheck::Signature => "signature",
            ProductCheck::EndorsementSignature => "endorsement_sig",
            ProductCheck::ProductMismatch => "product_mismatch",
            ProductCheck::DigestMismatch => "digest_mismatch",
        }
    }
}

impl fmt::Display for ProductCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProductCheck::ObjectMissing(l) | ProductCheck::ObjectCorrupt(l) => write!(f, "{}({l})", self.code()),
            other => f.write_str(other.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductVerification {
    pub failures: Vec<ProductCheck>,
}

impl ProductVerification {
    pub fn is_genuine(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn codes(&self) -> Vec<&'static str> {
        self.failures.iter().map(ProductCheck::code).collect()
    }

    pub fn has(&self, code: &str) -> bool {
        self.failures.iter().any(|f| f.code() == code)
    }
}

fn fetch<'s>(
    store: &'s ContentStore,
    record: &EndorsementRecord,
    label: &str,
    failures: &mut Vec<ProductCheck>,
) -> Option<&'s [u8]> {
    let Some(r) = record.object(label) else {
        failures.push(ProductCheck::ObjectMissing(label.to_string()));
        return None;
    };
    match store.get(&r.content_address) {
        Ok(bytes) => Some(bytes),
        Err(StoreError::Corrupt(_)) => {
            failures.push(ProductCheck::ObjectCorrupt(label.to_string()));
            None
        }
        Err(_) => {
            failures.push(ProductCheck::ObjectMissing(label.to_string()));
            None
        }
    }
}

/// Checks that the product matches the endorsement and that the endorsement
/// was authentic from the manufacturer when the record was notarized.
/// `manufacturer_active` is accepted but never consulted: the verdict must
/// hold after the manufacturer is gone.
pub fn verify_product(
    product_bytes: &[u8],
    record: &EndorsementRecord,
    store: &ContentStore,
    ledger: &Ledger,
    manufacturer_active: bool,
) -> ProductVerification {
    let _ = manufacturer_active;
    let mut failures = Vec::new();

    if ledger.verify().is_err() {
        failures.push(ProductCheck::LedgerIntegrity);
    }
    let on_ledger = ledger.records().any(|r| matches!(r, LedgerRecord::Endorsement(x) if x == record));
    if !on_ledger {
        failures.push(ProductCheck::LedgerMismatch);
    }

    let mut leaves = Vec::with_capacity(record.object_refs.len());
    let mut complete = true;
    for r in &record.object_refs {
        match store.get(&r.content_address) {
            Ok(bytes) => leaves.push(digest(bytes)),
            Err(_) => complete = false,
        }
    }
    if complete && merkle_root(&leaves).ok() != Some(record.merkle_root) {
        failures.push(ProductCheck::RootMismatch);
    }

    let root = fetch(store, record, LABEL_ROOT_CERT, &mut failures)
        .and_then(|b| Certificate::from_canonical_bytes(b).ok());
    let cert = fetch(store, record, LABEL_MANUFACTURER_CERT, &mut failures)
        .and_then(|b| Certificate::from_canonical_bytes(b).ok());
    let chain_ok = match (&root, &cert) {
        (Some(root), Some(cert)) => {
            root.subject == root.issuer && root.verify() && cert.issuer == root.subject && cert.verify()
        }
        _ => false,
    };
    if !chain_ok {
        failures.push(ProductCheck::CertChain);
    }
    let manufacturer_key = cert.as_ref().map(|c| c.subject.public_key.clone());
    let key_matches = manufacturer_key.as_ref() == Some(&record.manufacturer.public_key);
    if !(key_matches && manufacturer_key.as_ref().is_some_and(|k| record.verify_with(k))) {
        failures.push(ProductCheck::Signature);
    }

    match fetch(store, record, LABEL_ENDORSEMENT, &mut failures).map(Endorsement::from_bytes) {
        Some(Ok(endorsement)) => {
            if !manufacturer_key.as_ref().is_some_and(|k| endorsement.verify_with(k)) {
                failures.push(ProductCheck::EndorsementSignature);
            }
            if endorsement.product_id != record.product_id {
                failures.push(ProductCheck::ProductMismatch);
            }
            let reference = endorsement.reference_claims.get(PRODUCT_DIGEST_CLAIM).and_then(ClaimValue::as_digest);
            if reference != Some(&digest(product_bytes)) {
                failures.push(ProductCheck::DigestMismatch);
            }
        }
        Some(Err(_)) => failures.push(ProductCheck::EndorsementSignature),
        None => {}
    }

    ProductVerification { failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Role;

    struct World {
        ca: KeyPair,
        maker: KeyPair,
        store: ContentStore,
        ledger: Ledger,
    }

    fn world() -> World {
        World {
            ca: KeyPair::derive(1, Role::Endorser, "root-ca").unwrap(),
            maker: KeyPair::derive(1, Role::Endorser, "acme").unwrap(),
            store: ContentStore::new(),
            ledger: Ledger::new(),
        }
    }

    const FIRMWARE: &[u8] = b"acme firmware v2";

    fn register(w: &mut World, at: Tick) -> EndorsementRecord {
        let objects = verification_objects(&w.ca, &w.maker, "acme-fw", FIRMWARE, at);
        register_endorsement(&w.maker, "acme-fw", &objects, &mut w.store, &mut w.ledger, at).unwrap()
    }

    #[test]
    fn genuine_product_without_manufacturer() {
        let mut w = world();
        let rec = register(&mut w, 3);
        assert_eq!(rec.object_refs.len(), 3);
        for r in &rec.object_refs {
            assert!(w.store.get(&r.content_address).is_ok());
        }
        assert!(verify_product(FIRMWARE, &rec, &w.store, &w.ledger, false).is_genuine());
        assert!(verify_product(FIRMWARE, &rec, &w.store, &w.ledger, true).is_genuine());
    }

    #[test]
    fn altered_product() {
        let mut w = world();
        let rec = register(&mut w, 3);
        let mut bad = FIRMWARE.to_vec();
        bad[0] ^= 1;
        let v = verify_product(&bad, &rec, &w.store, &w.ledger, false);
        assert_eq!(v.codes(), vec!["digest_mismatch"]);
    }

    #[test]
    fn tampered_record() {
        let mut w = world();
        let mut rec = register(&mut w, 3);
        rec.merkle_root = digest(b"forged");
        let v = verify_product(FIRMWARE, &rec, &w.store, &w.ledger, true);
        assert!(v.has("ledger_mismatch"));
        assert!(v.has("root_mismatch"));
        assert!(v.has("signature"));
    }

    #[test]
    fn reregistration_keeps_root() {
        let mut w = world();
        let a = register(&mut w, 3);
        let objects = verification_objects(&w.ca, &w.maker, "acme-fw", FIRMWARE, 3);
        let b = register_endorsement(&w.maker, "acme-fw", &objects, &mut w.store, &mut w.ledger, 9).unwrap();
        assert_eq!(a.merkle_root, b.merkle_root);
        assert_ne!(a, b);
        assert_eq!(w.ledger.len(), 2);
    }

    #[test]
    fn mandatory_labels() {
        let mut w = world();
        let mut objects = verification_objects(&w.ca, &w.maker, "acme-fw", FIRMWARE, 3);
        objects.retain(|(l, _)| l != LABEL_ROOT_CERT);
        assert_eq!(
            register_endorsement(&w.maker, "acme-fw", &objects, &mut w.store, &mut w.ledger, 3),
            Err(RegistrationError::MissingLabel("root_cert"))
        );
    }

    #[test]
    fn record_canonical_round_trip() {
        let mut w = world();
        let rec = register(&mut w, 3);
        assert_eq!(EndorsementRecord::from_canonical_bytes(&rec.to_canonical_bytes()).unwrap(), rec);
    }
}
