//! Scenario files and the epoch driver.
//!
//! A scenario is key-sorted JSON. Software images are given as text and
//! used as raw bytes; endorsements name reference images the same way.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::universe::{ConfigError, ConsortiumConfig, Domain, EpochReport, Node, Universe};
use crate::attester::{sw_claim_key, SwImage, TargetEnvironment};
use crate::ledger::Transaction;
use crate::model::export::to_sorted_json;
use crate::model::identity::derive_signing_key;
use crate::model::{
    digest, ClaimSet, ClaimValue, Endorsement, EvidencePolicy, GeoFence, GeoPoint, KeyPair, PublicKey, Role, Tick,
};

fn default_majority() -> u8 {
    super::universe::DEFAULT_MAJORITY
}

fn default_raised() -> u8 {
    super::universe::DEFAULT_RAISED_MAJORITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub epochs: u64,
    pub epoch_length: Tick,
    #[serde(default = "default_majority")]
    pub majority_parameter: u8,
    #[serde(default = "default_raised")]
    pub raised_majority: u8,
    pub diversity_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo_fence: Option<GeoFence>,
    pub consortium_policy: EvidencePolicy,
    #[serde(default)]
    pub endorsements: Vec<EndorsementSpec>,
    pub domains: Vec<DomainSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub users: Vec<UserSpec>,
    #[serde(default)]
    pub transactions: Vec<TxSpec>,
    #[serde(default)]
    pub permissionless: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndorsementSpec {
    pub endorser: String,
    pub product_id: String,
    /// Image name to reference image text.
    pub images: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub domain_id: String,
    pub policy: EvidencePolicy,
    pub nodes: Vec<NodeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub node_id: String,
    pub hw_model: String,
    pub fw_version: i64,
    pub images: BTreeMap<String, String>,
    pub geo: GeoPoint,
    #[serde(default)]
    pub gpu_count: u32,
    pub stake: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mutation {
    FlipSwByte { image: String, offset: usize },
    ChangeFw { version: i64 },
    MoveGeo { lat: f64, lon: f64 },
    CloneConfig { from_node: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub tick: Tick,
    pub node_id: String,
    pub mutation: Mutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub name: String,
    pub registered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxSpec {
    pub user: String,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

/// First line of `text` containing `needle` as a JSON string literal.
fn line_of(text: &str, needle: &str) -> Option<usize> {
    let quoted = serde_json::to_string(needle).ok()?;
    text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
}

impl ScenarioConfig {
    /// Parses and validates; errors carry the offending line when known.
    pub fn from_text(text: &str) -> Result<Self, ScenarioError> {
        let config: ScenarioConfig = serde_json::from_str(text)
            .map_err(|e| ScenarioError { line: Some(e.line()), message: e.to_string() })?;
        config.validate().map_err(|(needle, message)| ScenarioError { line: line_of(text, &needle), message })?;
        Ok(config)
    }

    pub fn to_text(&self) -> String {
        to_sorted_json(self)
    }

    fn consortium_config(&self) -> ConsortiumConfig {
        ConsortiumConfig {
            consortium_policy: self.consortium_policy.clone(),
            majority_parameter: self.majority_parameter,
            diversity_threshold: self.diversity_threshold,
            raised_majority: self.raised_majority,
            geo_fence: self.geo_fence,
            epoch_length: self.epoch_length,
        }
    }

    /// On failure returns the identifier to locate in the source text and a message.
    fn validate(&self) -> Result<(), (String, String)> {
        if let Err(e) = self.consortium_config().validate() {
            let field = match e {
                ConfigError::Majority(_) => "majority_parameter",
                ConfigError::Raised { .. } => "raised_majority",
                ConfigError::Threshold(_) => "diversity_threshold",
                _ => "epoch_length",
            };
            return Err((field.into(), e.to_string()));
        }
        let mut ids = BTreeSet::new();
        let mut images_of = BTreeMap::new();
        for d in &self.domains {
            if !ids.insert(d.domain_id.as_str()) {
                return Err((d.domain_id.clone(), format!("duplicate domain id {:?}", d.domain_id)));
            }
            for n in &d.nodes {
                if !ids.insert(n.node_id.as_str()) {
                    return Err((n.node_id.clone(), format!("duplicate id {:?}", n.node_id)));
                }
                images_of.insert(n.node_id.as_str(), n);
            }
        }
        if images_of.is_empty() {
            return Err(("domains".into(), "scenario defines no nodes".into()));
        }
        for f in &self.faults {
            let Some(node) = images_of.get(f.node_id.as_str()) else {
                return Err((f.node_id.clone(), format!("fault references undefined node {:?}", f.node_id)));
            };
            match &f.mutation {
                Mutation::FlipSwByte { image, offset } => match node.images.get(image) {
                    None => return Err((image.clone(), format!("node {:?} has no image {image:?}", f.node_id))),
                    Some(text) if *offset >= text.len() => {
                        return Err((image.clone(), format!("offset {offset} beyond image {image:?}")))
                    }
                    Some(_) => {}
                },
                Mutation::CloneConfig { from_node } if !images_of.contains_key(from_node.as_str()) => {
                    return Err((from_node.clone(), format!("clone source {from_node:?} is undefined")))
                }
                Mutation::MoveGeo { lat, lon } => {
                    if let Err(e) = GeoPoint::new(*lat, *lon, 0.0) {
                        return Err(("move_geo".into(), e.to_string()));
                    }
                }
                _ => {}
            }
        }
        let users: BTreeSet<&str> = self.users.iter().map(|u| u.name.as_str()).collect();
        for tx in &self.transactions {
            if !users.contains(tx.user.as_str()) {
                return Err((tx.user.clone(), format!("transaction from undefined user {:?}", tx.user)));
            }
        }
        Ok(())
    }

    pub fn user_key(&self, name: &str) -> crate::model::SigningKey {
        derive_signing_key(self.seed, Role::Owner, name, "user")
    }

    pub fn registered_keys(&self) -> BTreeSet<PublicKey> {
        self.users.iter().filter(|u| u.registered).map(|u| self.user_key(&u.name).public_key()).collect()
    }

    /// Builds the initial universe, with policies distributed and the
    /// genesis block forged.
    pub fn build(&self) -> Result<Universe, ScenarioError> {
        let plain = |e: &dyn fmt::Display| ScenarioError { line: None, message: e.to_string() };
        let endorsements = self
            .endorsements
            .iter()
            .map(|spec| {
                let maker = KeyPair::derive(self.seed, Role::Endorser, &spec.endorser).map_err(|e| plain(&e))?;
                let mut claims = ClaimSet::new();
                for (name, text) in &spec.images {
                    claims.insert(sw_claim_key(name), ClaimValue::Digest(digest(text.as_bytes()))).map_err(|e| plain(&e))?;
                }
                Endorsement::issue(&maker.id, &maker.key, spec.product_id.clone(), claims, true, 0).map_err(|e| plain(&e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut domains = Vec::new();
        let mut nodes = Vec::new();
        for d in &self.domains {
            domains.push(Domain::new(self.seed, d.domain_id.clone(), d.policy.clone()));
            for n in &d.nodes {
                let images = n.images.iter().map(|(name, text)| SwImage::new(name.clone(), text.as_bytes().to_vec())).collect();
                let target = TargetEnvironment::new(n.hw_model.clone(), n.fw_version, images, n.geo, n.gpu_count, n.stake)
                    .map_err(|e| plain(&e))?;
                nodes.push(Node::new(self.seed, n.node_id.clone(), d.domain_id.clone(), target));
            }
        }
        let mut universe =
            Universe::new(self.seed, self.consortium_config(), endorsements, domains, nodes).map_err(|e| plain(&e))?;
        universe.permissionless = self.permissionless;
        universe.pending_txs =
            self.transactions.iter().map(|tx| Transaction::new(&self.user_key(&tx.user), tx.payload.as_bytes().to_vec())).collect();
        universe.bootstrap();
        Ok(universe)
    }
}

/// Applies `mutation` to `node_id`'s target environment.
pub fn apply_fault(universe: &mut Universe, node_id: &str, mutation: &Mutation) {
    let source = match mutation {
        Mutation::CloneConfig { from_node } => universe.node(from_node).map(|n| n.target.clone()),
        _ => None,
    };
    let Some(node) = universe.node_mut(node_id) else {
        return;
    };
    let target = &mut node.target;
    match mutation {
        Mutation::FlipSwByte { image, offset } => {
            if let Some(byte) = target.image_mut(image).and_then(|i| i.bytes.get_mut(*offset)) {
                *byte ^= 0x01;
            }
        }
        Mutation::ChangeFw { version } => target.fw_version = *version,
        Mutation::MoveGeo { lat, lon } => {
            target.geo = GeoPoint::new(*lat, *lon, target.geo.alt()).expect("validated with the scenario");
        }
        // Location and stake belong to the node, not its configuration.
        Mutation::CloneConfig { .. } => {
            if let Some(src) = source {
                target.hw_model = src.hw_model;
                target.fw_version = src.fw_version;
                target.sw_images = src.sw_images;
                target.gpu_count = src.gpu_count;
            }
        }
    }
}

pub struct SimulationOutcome {
    pub reports: Vec<EpochReport>,
    pub universe: Universe,
}

impl SimulationOutcome {
    pub fn reports_text(&self) -> String {
        to_sorted_json(&self.reports)
    }
}

/// Runs every epoch: due faults, attestation, governance at the boundary,
/// validator selection and block forging, then the honest-subset round in
/// permissionless mode. Epoch `k` (from 1) runs at tick `k * epoch_length`.
pub fn run_scenario(config: &ScenarioConfig) -> Result<SimulationOutcome, ScenarioError> {
    let mut universe = config.build()?;
    let registered = config.registered_keys();
    let mut faults: Vec<&FaultSpec> = config.faults.iter().collect();
    faults.sort_by_key(|f| f.tick);
    let mut next_fault = 0;
    let mut reports = Vec::new();
    for epoch in 1..=config.epochs {
        let clock = epoch * config.epoch_length;
        while next_fault < faults.len() && faults[next_fault].tick <= clock {
            let f = faults[next_fault];
            apply_fault(&mut universe, &f.node_id, &f.mutation);
            next_fault += 1;
        }
        let nodes = universe.run_epoch(clock);
        let majority = universe.update_governance();
        let diversity = universe.diversity_metric();
        let round_seed = universe.next_round_seed();
        let (validator, block_height) = match universe.select_validator(round_seed, clock) {
            Ok(v) => {
                let height = universe.forge_block(&v, clock).height;
                (Some(v), Some(height))
            }
            Err(_) => (None, Some(universe.record_halt(clock).height)),
        };
        let honest_block_height = if universe.permissionless {
            let seed = universe.next_round_seed();
            universe.honest_subset_round(&registered, seed, clock).ok().map(|b| b.height)
        } else {
            None
        };
        reports.push(EpochReport {
            epoch,
            tick: clock,
            nodes,
            diversity,
            majority,
            validator,
            block_height,
            honest_block_height,
        });
    }
    Ok(SimulationOutcome { reports, universe })
}
