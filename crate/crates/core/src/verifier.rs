//! The verifier role and relying-party result appraisal.
//!
//! Appraisal never fails on bad evidence: every failed check becomes a
//! reason in a signed result. Check order is fixed so reason lists are
//! reproducible:
//!
//! 1. `sig`: evidence signature under the attester key;
//! 2. `nonce`: echoed nonce equals the expected nonce;
//! 3. `stale`: nonce age exceeds the policy freshness window;
//! 4. `missing_claim`: some required claim is absent (reported once);
//! 5. each policy rule in order, reported by its `rule_id`.
//!
//! The verdict is `compliant` when no reason was recorded, `unknown` when a
//! reference-match rule had no endorsement covering its claim (or a layered
//! attester has no registered device secret), and `non_compliant` otherwise.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::attester::layer_chain;
use crate::model::{
    AttestationResult, ClaimSet, ClaimValue, Digest, EntityId, Evidence, EvidencePolicy, KeyPair, Nonce,
    ResultPolicy, RuleKind, Signed, SigningKey, Tick, Verdict,
};
use crate::model::policy::GEO_CLAIM;

pub const REASON_SIG: &str = "sig";
pub const REASON_NONCE: &str = "nonce";
pub const REASON_STALE: &str = "stale";
pub const REASON_MISSING_CLAIM: &str = "missing_claim";
pub const REASON_LAYER_LEN: &str = "layer.len";
pub const REASON_LAYER_UNREGISTERED: &str = "layer.unregistered";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifierError {
    #[error("verifier signing key does not match identity {0}")]
    KeyMismatch(EntityId),
}

/// Union of reference values from signature-valid endorsements.
#[derive(Debug, Clone, Default)]
pub struct ReferenceValues {
    values: BTreeMap<String, (ClaimValue, Tick)>,
    conflicts: Vec<String>,
    discarded: usize,
}

impl ReferenceValues {
    /// Invalid endorsements are dropped. When two endorsements disagree on
    /// a claim the later `issued_at` wins (list order breaks ties) and the
    /// key is recorded as a conflict.
    pub fn collect(endorsements: &[crate::model::Endorsement]) -> Self {
        let mut out = ReferenceValues::default();
        for (i, e) in endorsements.iter().enumerate() {
            if !e.verify() {
                log::warn!("discarding endorsement {i} from {}: signature invalid", e.endorser);
                out.discarded += 1;
                continue;
            }
            for (key, value) in e.reference_claims.iter() {
                match out.values.get(key) {
                    Some((existing, at)) if existing != value => {
                        log::warn!("endorsement.conflict on {key}: product {}", e.product_id);
                        out.conflicts.push(key.to_string());
                        if e.issued_at >= *at {
                            out.values.insert(key.to_string(), (value.clone(), e.issued_at));
                        }
                    }
                    Some((_, at)) => {
                        let at = (*at).max(e.issued_at);
                        out.values.insert(key.to_string(), (value.clone(), at));
                    }
                    None => {
                        out.values.insert(key.to_string(), (value.clone(), e.issued_at));
                    }
                }
            }
        }
        out
    }

    pub fn get(&self, key: &str) -> Option<&ClaimValue> {
        self.values.get(key).map(|(v, _)| v)
    }

    pub fn conflicts(&self) -> &[String] {
        &self.conflicts
    }

    pub fn discarded(&self) -> usize {
        self.discarded
    }
}

/// Reasons collected during appraisal plus whether any were "cannot judge".
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Findings {
    pub reasons: Vec<String>,
    pub undecidable: bool,
}

impl Findings {
    fn push(&mut self, reason: impl Into<String>) {
        self.reasons.push(reason.into());
    }

    fn absorb(&mut self, prefix: &str, other: Findings) {
        self.reasons.extend(other.reasons.into_iter().map(|r| format!("{prefix}{r}")));
        self.undecidable |= other.undecidable;
    }

    pub fn verdict(&self) -> Verdict {
        if self.reasons.is_empty() {
            Verdict::Compliant
        } else if self.undecidable {
            Verdict::Unknown
        } else {
            Verdict::NonCompliant
        }
    }
}

/// Freshness context for a top-level appraisal; components skip it.
#[derive(Debug, Clone, Copy)]
struct Session {
    expected_nonce: Nonce,
    clock: Tick,
}

fn check_envelope(evidence: &Evidence, policy: &EvidencePolicy, session: Option<Session>, out: &mut Findings) {
    if !evidence.verify() {
        out.push(REASON_SIG);
    }
    if let Some(s) = session {
        if evidence.nonce_echo.value != s.expected_nonce.value {
            out.push(REASON_NONCE);
        }
        if s.clock.saturating_sub(evidence.nonce_echo.issued_at) > policy.freshness_window {
            out.push(REASON_STALE);
        }
    }
    if policy.required_claims.iter().any(|k| !evidence.target_claims.contains(k)) {
        out.push(REASON_MISSING_CLAIM);
    }
}

/// Outcome of one rule against a claim set.
enum RuleOutcome {
    Pass,
    Fail,
    /// No endorsement covers the claim.
    Uncovered,
}

fn evaluate_rule(kind: &RuleKind, claims: &ClaimSet, refs: &ReferenceValues) -> RuleOutcome {
    let pass = |ok: bool| if ok { RuleOutcome::Pass } else { RuleOutcome::Fail };
    match kind {
        RuleKind::ReferenceMatch { claim } => match refs.get(claim) {
            None => RuleOutcome::Uncovered,
            Some(expected) => pass(claims.get(claim) == Some(expected)),
        },
        RuleKind::VersionAtLeast { claim, bound } => {
            pass(claims.get(claim).and_then(ClaimValue::as_integer).is_some_and(|v| v >= *bound))
        }
        RuleKind::GeoFence { fence } => {
            pass(claims.get(GEO_CLAIM).and_then(ClaimValue::as_geo).is_some_and(|g| fence.contains(g)))
        }
        RuleKind::ClaimPresent { claim } => pass(claims.contains(claim)),
        // Handled by the caller, which knows whether components were appraised.
        RuleKind::ComponentsAllCompliant => RuleOutcome::Pass,
    }
}

fn check_rules(
    evidence: &Evidence,
    policy: &EvidencePolicy,
    refs: &ReferenceValues,
    mut components: impl FnMut(&mut Findings),
    out: &mut Findings,
) {
    for rule in &policy.rules {
        match &rule.kind {
            RuleKind::ComponentsAllCompliant => {
                let mut inner = Findings::default();
                components(&mut inner);
                if !inner.reasons.is_empty() {
                    out.push(rule.rule_id.clone());
                    out.absorb("", inner);
                }
            }
            kind => match evaluate_rule(kind, &evidence.target_claims, refs) {
                RuleOutcome::Pass => {}
                RuleOutcome::Fail => out.push(rule.rule_id.clone()),
                RuleOutcome::Uncovered => {
                    out.push(rule.rule_id.clone());
                    out.undecidable = true;
                }
            },
        }
    }
}

/// Per-level inputs for composite appraisal; `components[i]` applies to the
/// evidence's `i`-th component.
#[derive(Debug, Clone, PartialEq)]
pub struct AppraisalPlan {
    pub endorsements: Vec<crate::model::Endorsement>,
    pub policy: EvidencePolicy,
    pub components: Vec<AppraisalPlan>,
}

impl AppraisalPlan {
    pub fn leaf(endorsements: Vec<crate::model::Endorsement>, policy: EvidencePolicy) -> Self {
        AppraisalPlan { endorsements, policy, components: Vec::new() }
    }
}

fn appraise_tree(evidence: &Evidence, plan: &AppraisalPlan, session: Option<Session>) -> Findings {
    let refs = ReferenceValues::collect(&plan.endorsements);
    let mut out = Findings::default();
    check_envelope(evidence, &plan.policy, session, &mut out);
    check_rules(
        evidence,
        &plan.policy,
        &refs,
        |inner| {
            for (i, comp) in evidence.components().iter().enumerate() {
                match plan.components.get(i) {
                    None => inner.push(format!("component.{i}.no_policy")),
                    Some(sub) => inner.absorb(&format!("component.{i}."), appraise_tree(comp, sub, None)),
                }
            }
        },
        &mut out,
    );
    out
}

/// Independent of any signing key, for callers that only need the findings.
pub fn evidence_findings(
    evidence: &Evidence,
    endorsements: &[crate::model::Endorsement],
    policy: &EvidencePolicy,
    expected_nonce: &Nonce,
    clock: Tick,
) -> Findings {
    let refs = ReferenceValues::collect(endorsements);
    let mut out = Findings::default();
    check_envelope(evidence, policy, Some(Session { expected_nonce: *expected_nonce, clock }), &mut out);
    check_rules(
        evidence,
        policy,
        &refs,
        // Plain appraisal does not judge components; only an empty set passes.
        |inner| {
            if !evidence.components().is_empty() {
                inner.push("components.unappraised");
            }
        },
        &mut out,
    );
    out
}

/// Device secrets provisioned by manufacturers, keyed by attester identity.
#[derive(Debug, Clone, Default)]
pub struct DeviceSecretRegistry {
    secrets: BTreeMap<EntityId, [u8; 32]>,
}

impl DeviceSecretRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, attester: EntityId, secret: [u8; 32]) {
        self.secrets.insert(attester, secret);
    }

    pub fn get(&self, attester: &EntityId) -> Option<&[u8; 32]> {
        self.secrets.get(attester)
    }
}

/// Compares reported layer identities against the chain recomputed from
/// the registered device secret and golden measurements. Only the first
/// divergent layer is reported; everything after it is untrusted anyway.
pub fn layer_findings(evidence: &Evidence, golden: &[Digest], registry: &DeviceSecretRegistry) -> Findings {
    let mut out = Findings::default();
    let Some(secret) = registry.get(&evidence.attester) else {
        out.push(REASON_LAYER_UNREGISTERED);
        out.undecidable = true;
        return out;
    };
    let expected = layer_chain(secret, golden);
    let reported = evidence.layer_chain.as_deref().unwrap_or(&[]);
    let mismatch = reported
        .iter()
        .zip(&expected)
        .enumerate()
        .find(|(i, (got, want))| got.index != *i as u64 || got.layer_key_id != want.layer_key_id);
    if let Some((i, _)) = mismatch {
        out.push(format!("layer.{i}"));
    } else if reported.len() != expected.len() {
        out.push(REASON_LAYER_LEN);
    }
    out
}

#[derive(Debug, Clone)]
pub struct Verifier {
    keys: KeyPair,
}

impl Verifier {
    pub fn new(identity: EntityId, key: SigningKey) -> Result<Self, VerifierError> {
        if key.public_key() != identity.public_key {
            return Err(VerifierError::KeyMismatch(identity));
        }
        Ok(Verifier { keys: KeyPair { id: identity, key } })
    }

    pub fn from_keys(keys: KeyPair) -> Result<Self, VerifierError> {
        Self::new(keys.id, keys.key)
    }

    pub fn identity(&self) -> &EntityId {
        &self.keys.id
    }

    fn issue(&self, evidence: &Evidence, policy: &EvidencePolicy, findings: Findings, clock: Tick) -> AttestationResult {
        AttestationResult::issue(
            &self.keys.id,
            &self.keys.key,
            evidence.attester.clone(),
            findings.verdict(),
            policy.digest(),
            evidence.nonce_echo,
            findings.reasons,
            clock,
        )
        .expect("verdict derived from reasons and key checked at construction")
    }

    pub fn appraise_evidence(
        &self,
        evidence: &Evidence,
        endorsements: &[crate::model::Endorsement],
        policy: &EvidencePolicy,
        expected_nonce: &Nonce,
        clock: Tick,
    ) -> AttestationResult {
        let findings = evidence_findings(evidence, endorsements, policy, expected_nonce, clock);
        self.issue(evidence, policy, findings, clock)
    }

    /// Layer checks come first in the reason list, then the ordinary checks.
    #[allow(clippy::too_many_arguments)]
    pub fn appraise_layered(
        &self,
        evidence: &Evidence,
        golden_measurements: &[Digest],
        registry: &DeviceSecretRegistry,
        endorsements: &[crate::model::Endorsement],
        policy: &EvidencePolicy,
        expected_nonce: &Nonce,
        clock: Tick,
    ) -> AttestationResult {
        let mut findings = layer_findings(evidence, golden_measurements, registry);
        findings.absorb("", evidence_findings(evidence, endorsements, policy, expected_nonce, clock));
        self.issue(evidence, policy, findings, clock)
    }

    /// Components are appraised against their own plans without nonce or
    /// freshness checks; they inherit the session through the lead.
    pub fn appraise_composite(
        &self,
        evidence: &Evidence,
        plan: &AppraisalPlan,
        expected_nonce: &Nonce,
        clock: Tick,
    ) -> AttestationResult {
        let findings = appraise_tree(evidence, plan, Some(Session { expected_nonce: *expected_nonce, clock }));
        self.issue(evidence, &plan.policy, findings, clock)
    }
}

/// Relying-party checks that failed for `result`; empty means accepted.
pub fn result_failures(result: &AttestationResult, rp_policy: &ResultPolicy, clock: Tick) -> Vec<&'static str> {
    let mut failures = Vec::new();
    if !result.verify() {
        failures.push("result.sig");
    }
    if !rp_policy.accepted_verifiers.contains(&result.verifier) {
        failures.push("result.verifier");
    }
    if clock.saturating_sub(result.created_at) > rp_policy.max_result_age {
        failures.push("result.age");
    }
    if result.verdict != rp_policy.required_verdict {
        failures.push("result.verdict");
    }
    failures
}

pub fn appraise_result(result: &AttestationResult, rp_policy: &ResultPolicy, clock: Tick) -> bool {
    result_failures(result, rp_policy, clock).is_empty()
}
