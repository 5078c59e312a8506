//! The attester role: measurement, evidence generation, layered key
//! derivation, composite collation and configuration-gated transaction keys.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::canonical::{DecodeError, Decoder, Encoder};
use crate::model::crypto::{digest, keyed_hash, Digest, PublicKey, Signed, SigningKey};
use crate::model::identity::{derive_secret, derive_signing_key, EntityId, KeyPair, Nonce, Role, Tick};
use crate::model::messages::{Evidence, LayerRecord, MessageError, MAX_COMPONENT_DEPTH};
use crate::model::{ClaimSet, ClaimValue, GeoPoint};

const TAG_CONFIG: u8 = b'T';
const TAG_STATE: u8 = b'S';

pub const CLAIM_HW_MODEL: &str = "hw.model";
pub const CLAIM_FW_VERSION: &str = "fw.version";
pub const CLAIM_GEO: &str = "geo";
pub const CLAIM_GPU_COUNT: &str = "gpu.count";
pub const CLAIM_CONFIG_DIGEST: &str = "config.digest";
pub const CLAIM_LAYER_COUNT: &str = "layer.count";

pub fn sw_claim_key(image_name: &str) -> String {
    format!("sw.{image_name}.digest")
}

pub fn layer_claim_key(index: usize) -> String {
    format!("layer.{index}.digest")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttesterError {
    #[error("clock {clock} is earlier than challenge issue time {issued_at}")]
    ClockRegression { clock: Tick, issued_at: Tick },
    #[error("layered evidence needs at least one layer image")]
    NoLayers,
    #[error("component evidence {index} failed signature verification")]
    BadComponent { index: usize },
    #[error("duplicate software image name {0:?}")]
    DuplicateImage(String),
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error("malformed attester state: {0}")]
    State(#[from] DecodeError),
    #[error("state file i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwImage {
    pub name: String,
    #[serde(with = "crate::model::hex_bytes")]
    pub bytes: Vec<u8>,
}

impl SwImage {
    pub fn new(name: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        SwImage { name: name.into(), bytes: bytes.into() }
    }
}

/// The environment being attested to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEnvironment {
    pub hw_model: String,
    pub fw_version: i64,
    pub sw_images: Vec<SwImage>,
    pub geo: GeoPoint,
    pub gpu_count: u32,
    /// Consensus stake; not part of the measured configuration.
    pub stake: u64,
}

impl TargetEnvironment {
    pub fn new(
        hw_model: impl Into<String>,
        fw_version: i64,
        sw_images: Vec<SwImage>,
        geo: GeoPoint,
        gpu_count: u32,
        stake: u64,
    ) -> Result<Self, AttesterError> {
        let env = TargetEnvironment { hw_model: hw_model.into(), fw_version, sw_images, geo, gpu_count, stake };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<(), AttesterError> {
        let mut names = BTreeSet::new();
        for img in &self.sw_images {
            if !names.insert(img.name.as_str()) {
                return Err(AttesterError::DuplicateImage(img.name.clone()));
            }
        }
        Ok(())
    }

    pub fn image_mut(&mut self, name: &str) -> Option<&mut SwImage> {
        self.sw_images.iter_mut().find(|i| i.name == name)
    }

    /// Canonical encoding of the configuration: hardware model, firmware
    /// version, software images and GPU count. Location and stake are
    /// runtime state and are excluded.
    pub fn config_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_tag(TAG_CONFIG);
        enc.str(&self.hw_model).i64(self.fw_version).list(&self.sw_images, |e, img| {
            e.str(&img.name).bytes(&img.bytes);
        });
        enc.u64(u64::from(self.gpu_count));
        enc.finish()
    }

    pub fn config_digest(&self) -> Digest {
        digest(&self.config_bytes())
    }
}

/// Measures `env` into its claim set.
pub fn measure(env: &TargetEnvironment) -> ClaimSet {
    let mut claims = ClaimSet::new();
    let mut put = |k: String, v: ClaimValue| {
        claims.insert(k, v).expect("measurement keys are non-empty");
    };
    put(CLAIM_HW_MODEL.into(), ClaimValue::Text(env.hw_model.clone()));
    put(CLAIM_FW_VERSION.into(), ClaimValue::Integer(env.fw_version));
    for img in &env.sw_images {
        put(sw_claim_key(&img.name), ClaimValue::Digest(digest(&img.bytes)));
    }
    put(CLAIM_GEO.into(), ClaimValue::Geo(env.geo));
    put(CLAIM_GPU_COUNT.into(), ClaimValue::Integer(i64::from(env.gpu_count)));
    put(CLAIM_CONFIG_DIGEST.into(), ClaimValue::Digest(env.config_digest()));
    claims
}

/// child = HMAC-SHA-256(key = parent, data = measurement).
pub fn derive_layer_key(parent_secret: &[u8; 32], measurement: &Digest) -> [u8; 32] {
    keyed_hash(parent_secret, measurement.as_bytes())
}

/// Builds the layer chain rooted at `device_secret` over the given measurements.
pub fn layer_chain(device_secret: &[u8; 32], measurements: &[Digest]) -> Vec<LayerRecord> {
    let mut secret = *device_secret;
    measurements
        .iter()
        .enumerate()
        .map(|(i, m)| {
            secret = derive_layer_key(&secret, m);
            LayerRecord { index: i as u64, measurement: *m, layer_key_id: digest(&secret) }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxRefusal {
    UnapprovedConfig,
}

impl TxRefusal {
    pub fn reason(&self) -> &'static str {
        match self {
            TxRefusal::UnapprovedConfig => "unapproved_config",
        }
    }
}

impl fmt::Display for TxRefusal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.reason())
    }
}

impl std::error::Error for TxRefusal {}

/// The isolated capability that measures, signs and conveys claims.
#[derive(Clone)]
pub struct AttestingEnvironment {
    identity: EntityId,
    attestation_key: SigningKey,
    device_secret: [u8; 32],
    approved_configs: Vec<Digest>,
    tx_key: SigningKey,
    tx_sealed: bool,
}

impl fmt::Debug for AttestingEnvironment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AttestingEnvironment")
            .field("identity", &self.identity)
            .field("approved_configs", &self.approved_configs.len())
            .field("tx_sealed", &self.tx_sealed)
            .finish_non_exhaustive()
    }
}

impl AttestingEnvironment {
    pub fn new(
        keys: KeyPair,
        device_secret: [u8; 32],
        approved_configs: Vec<Digest>,
        tx_key: SigningKey,
    ) -> Self {
        AttestingEnvironment {
            identity: keys.id,
            attestation_key: keys.key,
            device_secret,
            approved_configs,
            tx_key,
            tx_sealed: true,
        }
    }

    /// Every secret derived from `(seed, name)`.
    pub fn derive(seed: u64, name: &str, approved_configs: Vec<Digest>) -> Self {
        let keys = KeyPair::derive(seed, Role::Attester, name).expect("derived attester name is non-empty");
        let device_secret = derive_secret(seed, name, "device-secret");
        let tx_key = derive_signing_key(seed, Role::Attester, name, "tx");
        Self::new(keys, device_secret, approved_configs, tx_key)
    }

    pub fn identity(&self) -> &EntityId {
        &self.identity
    }

    pub fn approved_configs(&self) -> &[Digest] {
        &self.approved_configs
    }

    pub fn approve(&mut self, config: Digest) {
        if !self.approved_configs.contains(&config) {
            self.approved_configs.push(config);
        }
    }

    pub fn is_tx_sealed(&self) -> bool {
        self.tx_sealed
    }

    pub fn seal(&mut self) {
        self.tx_sealed = true;
    }

    pub fn tx_public_key(&self) -> PublicKey {
        self.tx_key.public_key()
    }

    /// Only the device-secret registry of a verifier may learn this value.
    pub fn provisioned_device_secret(&self) -> [u8; 32] {
        self.device_secret
    }

    pub fn generate_evidence(
        &self,
        env: &TargetEnvironment,
        challenge: Nonce,
        clock: Tick,
    ) -> Result<Evidence, AttesterError> {
        check_clock(challenge, clock)?;
        Ok(Evidence::unsigned(self.identity.clone(), measure(env), challenge, clock).sign(&self.attestation_key)?)
    }

    /// Evidence carrying the full layer chain; layer `i` is inspected by
    /// hashing its image, and its secret is keyed off layer `i - 1`.
    pub fn build_layered_evidence<I: AsRef<[u8]>>(
        &self,
        layer_images: &[I],
        challenge: Nonce,
        clock: Tick,
    ) -> Result<Evidence, AttesterError> {
        if layer_images.is_empty() {
            return Err(AttesterError::NoLayers);
        }
        check_clock(challenge, clock)?;
        let measurements: Vec<Digest> = layer_images.iter().map(|img| digest(img.as_ref())).collect();
        let chain = layer_chain(&self.device_secret, &measurements);
        let mut claims = ClaimSet::new();
        for (i, m) in measurements.iter().enumerate() {
            claims.insert(layer_claim_key(i), ClaimValue::Digest(*m)).expect("non-empty key");
        }
        claims
            .insert(CLAIM_LAYER_COUNT, ClaimValue::Integer(measurements.len() as i64))
            .expect("non-empty key");
        Ok(Evidence::unsigned(self.identity.clone(), claims, challenge, clock)
            .with_layers(chain)
            .sign(&self.attestation_key)?)
    }

    /// Assembles component evidence under this lead attester's own claims.
    /// Components are carried unmodified; any that fail verification are refused.
    pub fn collate_composite(
        &self,
        own_env: &TargetEnvironment,
        component_evidence: Vec<Evidence>,
        challenge: Nonce,
        clock: Tick,
    ) -> Result<Evidence, AttesterError> {
        check_clock(challenge, clock)?;
        if let Some(index) = component_evidence.iter().position(|c| !c.verify()) {
            return Err(AttesterError::BadComponent { index });
        }
        let depth = 1 + component_evidence.iter().map(Evidence::depth).max().unwrap_or(0);
        if depth > MAX_COMPONENT_DEPTH {
            return Err(MessageError::TooDeep(depth).into());
        }
        Ok(Evidence::unsigned(self.identity.clone(), measure(own_env), challenge, clock)
            .with_components(component_evidence)
            .sign(&self.attestation_key)?)
    }

    /// Signs `payload` with the transaction key if and only if `env`'s
    /// configuration digest is approved; otherwise the key stays sealed.
    pub fn use_tx_key(&mut self, env: &TargetEnvironment, payload: &[u8]) -> Result<Vec<u8>, TxRefusal> {
        if self.approved_configs.contains(&env.config_digest()) {
            self.tx_sealed = false;
            Ok(self.tx_key.sign(payload))
        } else {
            self.tx_sealed = true;
            Err(TxRefusal::UnapprovedConfig)
        }
    }

    /// Persisted state. The transaction key is always stored sealed.
    pub fn to_state_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_tag(TAG_STATE);
        enc.encode(&self.identity)
            .fixed(&self.attestation_key.to_seed())
            .fixed(&self.tx_key.to_seed())
            .bool(true)
            .list(&self.approved_configs, |e, d| {
                e.encode(d);
            })
            .fixed(&self.device_secret);
        enc.finish()
    }

    pub fn from_state_bytes(bytes: &[u8]) -> Result<Self, AttesterError> {
        let mut dec = Decoder::new(bytes);
        dec.expect_tag("attester state", TAG_STATE)?;
        let identity: EntityId = dec.decode()?;
        let attestation_key = SigningKey::from_seed(dec.array()?);
        let tx_key = SigningKey::from_seed(dec.array()?);
        let tx_sealed = dec.bool()?;
        let approved_configs = dec.list(|d| d.decode())?;
        let device_secret = dec.array()?;
        dec.finish()?;
        if attestation_key.public_key() != identity.public_key {
            return Err(AttesterError::Message(MessageError::KeyMismatch));
        }
        Ok(AttestingEnvironment { identity, attestation_key, device_secret, approved_configs, tx_key, tx_sealed })
    }

    pub fn save(&self, path: &Path) -> Result<(), AttesterError> {
        std::fs::write(path, self.to_state_bytes()).map_err(|e| AttesterError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, AttesterError> {
        let bytes = std::fs::read(path).map_err(|e| AttesterError::Io(e.to_string()))?;
        Self::from_state_bytes(&bytes)
    }
}

fn check_clock(challenge: Nonce, clock: Tick) -> Result<(), AttesterError> {
    if clock < challenge.issued_at {
        return Err(AttesterError::ClockRegression { clock, issued_at: challenge.issued_at });
    }
    Ok(())
}
