use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rand::{Rng, RngCore, SeedableRng};
use serde::Serialize;
use thiserror::Error;

use crate::attester::{AttestingEnvironment, TargetEnvironment, CLAIM_GEO};
use crate::ledger::{Ledger, LedgerBlock, LedgerRecord, Transaction};
use crate::model::canonical::Encoder;
use crate::model::{
    digest, new_nonce, AttestationResult, ClaimValue, Digest, Endorsement, EvidencePolicy, GeoFence,
    GeoPoint, KeyPair, PublicKey, ResultPolicy, Role, Signed, Tick, UniverseRng, Verdict,
};
use crate::verifier::{appraise_result, Verifier};

pub const DEFAULT_MAJORITY: u8 = 51;
pub const DEFAULT_RAISED_MAJORITY: u8 = 70;
pub const CONSORTIUM_SCOPE: &str = "consortium";
/// Forger name on blocks not produced by a node: bootstrap and halts.
pub const CONSORTIUM_FORGER: &str = "consortium";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("majority parameter {0} must be in (50, 100]")]
    Majority(u8),
    #[error("raised majority {raised} is below majority parameter {base}")]
    Raised { base: u8, raised: u8 },
    #[error("diversity threshold {0} must be in (0, 1]")]
    Threshold(f64),
    #[error("epoch length must be at least 1")]
    EpochLength,
    #[error("duplicate id {0:?}")]
    Duplicate(String),
    #[error("node {node:?} references undefined domain {domain:?}")]
    UnknownDomain { node: String, domain: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsortiumConfig {
    pub consortium_policy: EvidencePolicy,
    pub majority_parameter: u8,
    pub diversity_threshold: f64,
    pub raised_majority: u8,
    pub geo_fence: Option<GeoFence>,
    pub epoch_length: Tick,
}

impl ConsortiumConfig {
    pub fn new(consortium_policy: EvidencePolicy, diversity_threshold: f64, epoch_length: Tick) -> Self {
        ConsortiumConfig {
            consortium_policy,
            majority_parameter: DEFAULT_MAJORITY,
            diversity_threshold,
            raised_majority: DEFAULT_RAISED_MAJORITY,
            geo_fence: None,
            epoch_length,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(51..=100).contains(&self.majority_parameter) {
            return Err(ConfigError::Majority(self.majority_parameter));
        }
        if self.raised_majority < self.majority_parameter || self.raised_majority > 100 {
            return Err(ConfigError::Raised { base: self.majority_parameter, raised: self.raised_majority });
        }
        if !(self.diversity_threshold > 0.0 && self.diversity_threshold <= 1.0) {
            return Err(ConfigError::Threshold(self.diversity_threshold));
        }
        if self.epoch_length < 1 {
            return Err(ConfigError::EpochLength);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEntry {
    pub tick: Tick,
    pub bytes: Vec<u8>,
}

/// Digest over a slice of audit entries, as anchored on the ledger.
pub fn audit_digest(entries: &[AuditEntry]) -> Digest {
    let mut enc = Encoder::new();
    enc.list(entries, |e, entry| {
        e.u64(entry.tick).bytes(&entry.bytes);
    });
    digest(&enc.finish())
}

pub struct Domain {
    pub domain_id: String,
    pub owner: KeyPair,
    pub verifier: Verifier,
    /// The domain's own policy as submitted.
    pub policy: EvidencePolicy,
    /// The policy in force after consortium rules override conflicts.
    pub effective_policy: EvidencePolicy,
    audit_log: Vec<AuditEntry>,
    anchored: usize,
    pub nodes: Vec<String>,
}

impl Domain {
    pub fn new(seed: u64, domain_id: impl Into<String>, policy: EvidencePolicy) -> Self {
        let domain_id = domain_id.into();
        let owner = KeyPair::derive(seed, Role::Owner, &format!("owner.{domain_id}")).expect("non-empty name");
        let verifier = Verifier::from_keys(KeyPair::derive(seed, Role::Verifier, &format!("dv.{domain_id}")).expect("non-empty name"))
            .expect("derived keys match");
        Domain {
            domain_id,
            owner,
            verifier,
            effective_policy: policy.clone(),
            policy,
            audit_log: Vec::new(),
            anchored: 0,
            nodes: Vec::new(),
        }
    }

    pub fn audit_log(&self) -> &[AuditEntry] {
        &self.audit_log
    }

    /// Ticks never decrease along the log.
    fn log(&mut self, tick: Tick, bytes: Vec<u8>) {
        if let Some(last) = self.audit_log.last() {
            assert!(tick >= last.tick, "audit log tick regressed: {tick} < {}", last.tick);
        }
        self.audit_log.push(AuditEntry { tick, bytes });
    }
}

pub struct Node {
    pub node_id: String,
    pub domain_id: String,
    pub attester: AttestingEnvironment,
    pub target: TargetEnvironment,
    pub local_verifier: Verifier,
    /// Consortium policy first, then the node's effective domain policy.
    pub local_policies: Vec<EvidencePolicy>,
    pub last_result: Option<AttestationResult>,
    /// Location as claimed in the node's most recent consortium evidence.
    pub attested_geo: Option<GeoPoint>,
    /// Grant decisions this node took as its own relying party, by peer.
    pub peer_decisions: BTreeMap<String, bool>,
    pub ledger: Ledger,
}

impl Node {
    pub fn new(seed: u64, node_id: impl Into<String>, domain_id: impl Into<String>, target: TargetEnvironment) -> Self {
        let node_id = node_id.into();
        let attester = AttestingEnvironment::derive(seed, &node_id, vec![target.config_digest()]);
        let local_verifier =
            Verifier::from_keys(KeyPair::derive(seed, Role::Verifier, &format!("lv.{node_id}")).expect("non-empty name"))
                .expect("derived keys match");
        Node {
            node_id,
            domain_id: domain_id.into(),
            attester,
            target,
            local_verifier,
            local_policies: Vec::new(),
            last_result: None,
            attested_geo: None,
            peer_decisions: BTreeMap::new(),
            ledger: Ledger::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeReport {
    pub node_id: String,
    pub domain_verdict: Verdict,
    pub consortium_verdict: Verdict,
    pub owner_granted: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: u64,
    pub tick: Tick,
    pub nodes: Vec<NodeReport>,
    pub diversity: f64,
    pub majority: u8,
    pub validator: Option<String>,
    pub block_height: Option<u64>,
    pub honest_block_height: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no_eligible: no node may forge at tick {tick}")]
pub struct NoEligible {
    pub tick: Tick,
}

pub struct Universe {
    pub config: ConsortiumConfig,
    pub consortium_verifier: Verifier,
    pub endorsements: Vec<Endorsement>,
    pub domains: Vec<Domain>,
    /// Ascending by node_id.
    pub nodes: Vec<Node>,
    ledger: Ledger,
    pending: Vec<LedgerRecord>,
    recorded_policies: BTreeSet<(String, Digest)>,
    pub pending_txs: Vec<Transaction>,
    pub permissionless: bool,
    effective_majority: u8,
    epoch: u64,
    rng: UniverseRng,
}

impl Universe {
    pub fn new(
        seed: u64,
        config: ConsortiumConfig,
        endorsements: Vec<Endorsement>,
        domains: Vec<Domain>,
        mut nodes: Vec<Node>,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut domains = domains;
        let mut seen = BTreeSet::new();
        for d in &domains {
            if !seen.insert(d.domain_id.clone()) {
                return Err(ConfigError::Duplicate(d.domain_id.clone()));
            }
        }
        let mut node_ids = BTreeSet::new();
        for n in &nodes {
            if !node_ids.insert(n.node_id.clone()) {
                return Err(ConfigError::Duplicate(n.node_id.clone()));
            }
            let Some(d) = domains.iter_mut().find(|d| d.domain_id == n.domain_id) else {
                return Err(ConfigError::UnknownDomain { node: n.node_id.clone(), domain: n.domain_id.clone() });
            };
            d.nodes.push(n.node_id.clone());
        }
        nodes.sort_by(|a, b| a.node_id.cmp(&b.node_id));
        let consortium_verifier =
            Verifier::from_keys(KeyPair::derive(seed, Role::Verifier, "consortium").expect("non-empty name"))
                .expect("derived keys match");
        Ok(Universe {
            effective_majority: config.majority_parameter,
            config,
            consortium_verifier,
            endorsements,
            domains,
            nodes,
            ledger: Ledger::new(),
            pending: Vec::new(),
            recorded_policies: BTreeSet::new(),
            pending_txs: Vec::new(),
            permissionless: false,
            epoch: 0,
            rng: UniverseRng::seed_from_u64(seed),
        })
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn pending(&self) -> &[LedgerRecord] {
        &self.pending
    }

    /// Submitted transactions not yet included in a block.
    pub fn pending_transactions(&self) -> &[Transaction] {
        &self.pending_txs
    }

    pub fn effective_majority(&self) -> u8 {
        self.effective_majority
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn node(&self, node_id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.node_id == node_id)
    }

    pub fn node_mut(&mut self, node_id: &str) -> Option<&mut Node> {
        self.nodes.iter_mut().find(|n| n.node_id == node_id)
    }

    fn node_index(&self, node_id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.node_id == node_id)
    }

    pub fn next_round_seed(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Installs consortium and domain policies at every node and queues
    /// their digests for the ledger. A domain rule sharing a rule id with a
    /// consortium rule but differing in parameters is a conflict: it is
    /// queued as a record and the consortium rule is used in its place.
    /// Repeating the call with unchanged policies queues nothing.
    pub fn distribute_policies(&mut self) {
        let consortium = self.config.consortium_policy.clone();
        if self.recorded_policies.insert((CONSORTIUM_SCOPE.into(), consortium.digest())) {
            self.pending.push(LedgerRecord::PolicyDigest {
                scope: CONSORTIUM_SCOPE.into(),
                policy_id: consortium.policy_id.clone(),
                digest: consortium.digest(),
            });
        }
        for domain in &mut self.domains {
            let mut effective = domain.policy.clone();
            let mut conflicts = Vec::new();
            for rule in &mut effective.rules {
                if let Some(winner) = consortium.rule(&rule.rule_id) {
                    if winner != rule {
                        conflicts.push(rule.rule_id.clone());
                        *rule = winner.clone();
                    }
                }
            }
            domain.effective_policy = effective;
            let key = (domain.domain_id.clone(), domain.effective_policy.digest());
            if self.recorded_policies.insert(key) {
                for rule_id in conflicts {
                    warn!("policy.conflict domain={} rule={rule_id}", domain.domain_id);
                    self.pending.push(LedgerRecord::PolicyConflict { domain_id: domain.domain_id.clone(), rule_id });
                }
                self.pending.push(LedgerRecord::PolicyDigest {
                    scope: domain.domain_id.clone(),
                    policy_id: domain.effective_policy.policy_id.clone(),
                    digest: domain.effective_policy.digest(),
                });
            }
        }
        for node in &mut self.nodes {
            let domain = self.domains.iter().find(|d| d.domain_id == node.domain_id).expect("validated at construction");
            node.local_policies = vec![consortium.clone(), domain.effective_policy.clone()];
        }
    }

    /// Distributes policies, records the baseline governance parameter, and
    /// has the consortium forge the genesis block.
    pub fn bootstrap(&mut self) -> &LedgerBlock {
        self.distribute_policies();
        let (distinct, count) = self.config_counts();
        self.pending.push(LedgerRecord::Governance {
            epoch: 0,
            distinct_configs: distinct as u64,
            node_count: count as u64,
            majority: self.effective_majority,
        });
        self.forge_block(CONSORTIUM_FORGER, 0)
    }

    fn owner_policy(&self, domain: &Domain) -> ResultPolicy {
        ResultPolicy::new(
            vec![domain.verifier.identity().clone(), self.consortium_verifier.identity().clone()],
            self.config.epoch_length,
            Verdict::Compliant,
        )
        .expect("two verifiers")
    }

    /// Each node is appraised by its domain verifier and by the consortium
    /// verifier; the domain owner decides on both results. Everything
    /// exchanged lands in the domain's audit log, whose new slice is queued
    /// for anchoring.
    pub fn run_epoch(&mut self, clock: Tick) -> Vec<NodeReport> {
        self.epoch += 1;
        let mut reports = Vec::with_capacity(self.nodes.len());
        for i in 0..self.nodes.len() {
            let d = self.domains.iter().position(|d| d.domain_id == self.nodes[i].domain_id).expect("validated");
            let node = &self.nodes[i];

            let dv_nonce = new_nonce(clock, &mut self.rng);
            let dv_evidence = node.attester.generate_evidence(&node.target, dv_nonce, clock).expect("nonce issued now");
            let domain = &self.domains[d];
            let dv_result =
                domain.verifier.appraise_evidence(&dv_evidence, &self.endorsements, &domain.effective_policy, &dv_nonce, clock);

            let cv_nonce = new_nonce(clock, &mut self.rng);
            let cv_evidence = node.attester.generate_evidence(&node.target, cv_nonce, clock).expect("nonce issued now");
            let cv_result = self.consortium_verifier.appraise_evidence(
                &cv_evidence,
                &self.endorsements,
                &self.config.consortium_policy,
                &cv_nonce,
                clock,
            );

            let owner = self.owner_policy(domain);
            let owner_granted = appraise_result(&dv_result, &owner, clock) && appraise_result(&cv_result, &owner, clock);
            let mut reasons = dv_result.reasons.clone();
            for r in &cv_result.reasons {
                if !reasons.contains(r) {
                    reasons.push(r.clone());
                }
            }
            reports.push(NodeReport {
                node_id: node.node_id.clone(),
                domain_verdict: dv_result.verdict,
                consortium_verdict: cv_result.verdict,
                owner_granted,
                reasons,
            });

            let attested_geo = cv_evidence.target_claims.get(CLAIM_GEO).and_then(ClaimValue::as_geo).copied();
            let cv_bytes = cv_result.to_bytes();
            self.pending.push(LedgerRecord::ResultDigest {
                node_id: node.node_id.clone(),
                verdict: cv_result.verdict,
                digest: digest(&cv_bytes),
            });
            let domain = &mut self.domains[d];
            domain.log(clock, dv_evidence.to_bytes());
            domain.log(clock, dv_result.to_bytes());
            domain.log(clock, cv_evidence.to_bytes());
            domain.log(clock, cv_bytes);

            let node = &mut self.nodes[i];
            node.last_result = Some(cv_result);
            node.attested_geo = attested_geo;
        }
        for domain in &mut self.domains {
            let slice = &domain.audit_log[domain.anchored..];
            if slice.is_empty() {
                continue;
            }
            self.pending.push(LedgerRecord::AuditDigest {
                domain_id: domain.domain_id.clone(),
                first_entry: domain.anchored as u64,
                entry_count: slice.len() as u64,
                digest: audit_digest(slice),
            });
            domain.anchored = domain.audit_log.len();
        }
        reports
    }

    /// Node `y`'s local verifier appraises fresh evidence from node `x`
    /// under the consortium policy; `y` caches its own grant decision.
    pub fn peer_appraise(&mut self, x: &str, y: &str, clock: Tick) -> Option<AttestationResult> {
        let (xi, yi) = (self.node_index(x)?, self.node_index(y)?);
        let nonce = new_nonce(clock, &mut self.rng);
        let (nx, ny) = (&self.nodes[xi], &self.nodes[yi]);
        let evidence = nx.attester.generate_evidence(&nx.target, nonce, clock).expect("nonce issued now");
        let policy = ny.local_policies.first().unwrap_or(&self.config.consortium_policy);
        let result = ny.local_verifier.appraise_evidence(&evidence, &self.endorsements, policy, &nonce, clock);
        let own = ResultPolicy::new(vec![ny.local_verifier.identity().clone()], self.config.epoch_length, Verdict::Compliant)
            .expect("one verifier");
        let granted = appraise_result(&result, &own, clock);
        self.nodes[yi].peer_decisions.insert(x.to_string(), granted);
        Some(result)
    }

    /// Nodes allowed to forge at `clock`, ascending by node_id.
    pub fn eligible_nodes(&self, clock: Tick) -> Vec<&Node> {
        self.nodes
            .iter()
            .filter(|n| match &n.last_result {
                Some(r) => {
                    r.verdict == Verdict::Compliant
                        && clock.saturating_sub(r.created_at) <= self.config.epoch_length
                        && match (&self.config.geo_fence, &n.attested_geo) {
                            (None, _) => true,
                            (Some(fence), Some(geo)) => fence.contains(geo),
                            (Some(_), None) => false,
                        }
                }
                None => false,
            })
            .collect()
    }

    /// Stake-weighted draw among eligible nodes, walked in ascending
    /// node_id order. With zero total stake every eligible node is equally likely.
    pub fn select_validator(&self, round_seed: u64, clock: Tick) -> Result<String, NoEligible> {
        let eligible = self.eligible_nodes(clock);
        if eligible.is_empty() {
            return Err(NoEligible { tick: clock });
        }
        let mut rng = UniverseRng::seed_from_u64(round_seed);
        let total: u128 = eligible.iter().map(|n| u128::from(n.target.stake)).sum();
        if total == 0 {
            return Ok(eligible[rng.gen_range(0..eligible.len())].node_id.clone());
        }
        let mut draw = rng.gen_range(0..total);
        for n in &eligible {
            let stake = u128::from(n.target.stake);
            if draw < stake {
                return Ok(n.node_id.clone());
            }
            draw -= stake;
        }
        unreachable!("draw below total stake")
    }

    /// Seals every pending record into the next block and broadcasts it to
    /// all node copies.
    pub fn forge_block(&mut self, forger: &str, clock: Tick) -> &LedgerBlock {
        let records = std::mem::take(&mut self.pending);
        self.append_block(records, forger, clock)
    }

    fn append_block(&mut self, records: Vec<LedgerRecord>, forger: &str, clock: Tick) -> &LedgerBlock {
        let block = self.ledger.next_block(records, forger, clock);
        for node in &mut self.nodes {
            node.ledger.push(block.clone()).expect("copies track the canonical ledger");
        }
        self.ledger.push(block).expect("next_block links to tip");
        self.ledger.tip().expect("just appended")
    }

    /// Records a halted round in a block of its own; pending records wait.
    pub fn record_halt(&mut self, clock: Tick) -> &LedgerBlock {
        self.append_block(vec![LedgerRecord::Halt { tick: clock }], CONSORTIUM_FORGER, clock)
    }

    fn config_counts(&self) -> (usize, usize) {
        let distinct: BTreeSet<Digest> = self.nodes.iter().map(|n| n.target.config_digest()).collect();
        (distinct.len(), self.nodes.len())
    }

    /// Distinct configuration digests over node count.
    pub fn diversity_metric(&self) -> f64 {
        let (distinct, count) = self.config_counts();
        if count == 0 {
            return 0.0;
        }
        distinct as f64 / count as f64
    }

    /// Raised majority while diversity is strictly below the threshold,
    /// base majority otherwise. A change is queued as a governance record.
    pub fn update_governance(&mut self) -> u8 {
        let next = if self.diversity_metric() < self.config.diversity_threshold {
            self.config.raised_majority
        } else {
            self.config.majority_parameter
        };
        if next != self.effective_majority {
            self.effective_majority = next;
            let (distinct, count) = self.config_counts();
            self.pending.push(LedgerRecord::Governance {
                epoch: self.epoch,
                distinct_configs: distinct as u64,
                node_count: count as u64,
                majority: next,
            });
        }
        self.effective_majority
    }

    /// An honest validator forges a block of only those pending transactions
    /// whose originator pre-registered its key, in arrival order, and is
    /// credited for them. Unregistered transactions stay pending.
    pub fn honest_subset_round(
        &mut self,
        registered: &BTreeSet<PublicKey>,
        round_seed: u64,
        clock: Tick,
    ) -> Result<&LedgerBlock, NoEligible> {
        let validator = self.select_validator(round_seed, clock)?;
        let (included, kept): (Vec<Transaction>, Vec<Transaction>) = std::mem::take(&mut self.pending_txs)
            .into_iter()
            .partition(|tx| registered.contains(&tx.originator) && tx.verify());
        self.pending_txs = kept;
        let tx_count = included.len() as u64;
        let mut records: Vec<LedgerRecord> = included.into_iter().map(LedgerRecord::Transaction).collect();
        records.push(LedgerRecord::Remuneration { node_id: validator.clone(), tx_count });
        Ok(self.append_block(records, &validator, clock))
    }
}
