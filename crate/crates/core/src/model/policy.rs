//! Appraisal policies for evidence (verifier side) and results (relying-party side).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::canonical::{Canonical, DecodeError, Decoder, Encoder};
use super::claims::GeoPoint;
use super::crypto::{digest, Digest};
use super::identity::{EntityId, Tick};
use super::messages::Verdict;

pub const TAG_POLICY: u8 = b'P';

/// Claim key read by geo-fence rules.
pub const GEO_CLAIM: &str = "geo";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("freshness window must be at least 1 tick")]
    FreshnessWindow,
    #[error("policy id must be non-empty")]
    EmptyId,
    #[error("rule id must be non-empty")]
    EmptyRuleId,
    #[error("duplicate rule id {0:?}")]
    DuplicateRule(String),
    #[error("geo fence bounds not well ordered: {0}")]
    GeoFence(String),
    #[error("result policy needs at least one accepted verifier")]
    NoVerifiers,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFence")]
pub struct GeoFence {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

#[derive(Deserialize)]
struct RawFence {
    lat_min: f64,
    lat_max: f64,
    lon_min: f64,
    lon_max: f64,
}

impl TryFrom<RawFence> for GeoFence {
    type Error = PolicyError;

    fn try_from(r: RawFence) -> Result<Self, Self::Error> {
        GeoFence::new(r.lat_min, r.lat_max, r.lon_min, r.lon_max)
    }
}

impl GeoFence {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self, PolicyError> {
        let ordered = lat_min <= lat_max && lon_min <= lon_max;
        if !ordered {
            return Err(PolicyError::GeoFence(format!(
                "lat [{lat_min}, {lat_max}] lon [{lon_min}, {lon_max}]"
            )));
        }
        Ok(GeoFence { lat_min, lat_max, lon_min, lon_max })
    }

    /// Inclusive on all four edges.
    pub fn contains(&self, p: &GeoPoint) -> bool {
        (self.lat_min..=self.lat_max).contains(&p.lat()) && (self.lon_min..=self.lon_max).contains(&p.lon())
    }
}

impl Canonical for GeoFence {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.f64(self.lat_min).f64(self.lat_max).f64(self.lon_min).f64(self.lon_max);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let (a, b, c, d) = (dec.f64()?, dec.f64()?, dec.f64()?, dec.f64()?);
        GeoFence::new(a, b, c, d).map_err(|e| DecodeError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleKind {
    /// Claim must equal the endorsed reference value for the same key.
    ReferenceMatch { claim: String },
    /// Integer claim must be at least `bound`.
    VersionAtLeast { claim: String, bound: i64 },
    /// The `geo` claim must lie inside the fence.
    GeoFence { fence: GeoFence },
    ClaimPresent { claim: String },
    ComponentsAllCompliant,
}

impl Canonical for RuleKind {
    fn encode_to(&self, enc: &mut Encoder) {
        match self {
            RuleKind::ReferenceMatch { claim } => enc.u8(0).str(claim),
            RuleKind::VersionAtLeast { claim, bound } => enc.u8(1).str(claim).i64(*bound),
            RuleKind::GeoFence { fence } => enc.u8(2).encode(fence),
            RuleKind::ClaimPresent { claim } => enc.u8(3).str(claim),
            RuleKind::ComponentsAllCompliant => enc.u8(4),
        };
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => RuleKind::ReferenceMatch { claim: dec.string()? },
            1 => RuleKind::VersionAtLeast { claim: dec.string()?, bound: dec.i64()? },
            2 => RuleKind::GeoFence { fence: dec.decode()? },
            3 => RuleKind::ClaimPresent { claim: dec.string()? },
            4 => RuleKind::ComponentsAllCompliant,
            tag => return Err(DecodeError::BadTag { what: "rule kind", tag }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub rule_id: String,
    #[serde(flatten)]
    pub kind: RuleKind,
}

impl PolicyRule {
    pub fn new(rule_id: impl Into<String>, kind: RuleKind) -> Self {
        PolicyRule { rule_id: rule_id.into(), kind }
    }

    pub fn reference_match(rule_id: impl Into<String>, claim: impl Into<String>) -> Self {
        Self::new(rule_id, RuleKind::ReferenceMatch { claim: claim.into() })
    }

    pub fn version_at_least(rule_id: impl Into<String>, claim: impl Into<String>, bound: i64) -> Self {
        Self::new(rule_id, RuleKind::VersionAtLeast { claim: claim.into(), bound })
    }

    pub fn geo_fence(rule_id: impl Into<String>, fence: GeoFence) -> Self {
        Self::new(rule_id, RuleKind::GeoFence { fence })
    }

    pub fn claim_present(rule_id: impl Into<String>, claim: impl Into<String>) -> Self {
        Self::new(rule_id, RuleKind::ClaimPresent { claim: claim.into() })
    }

    pub fn components_all_compliant(rule_id: impl Into<String>) -> Self {
        Self::new(rule_id, RuleKind::ComponentsAllCompliant)
    }
}

impl Canonical for PolicyRule {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.str(&self.rule_id).encode(&self.kind);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(PolicyRule { rule_id: dec.string()?, kind: dec.decode()? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy")]
pub struct EvidencePolicy {
    pub policy_id: String,
    pub rules: Vec<PolicyRule>,
    pub freshness_window: Tick,
    pub required_claims: Vec<String>,
}

#[derive(Deserialize)]
struct RawPolicy {
    policy_id: String,
    #[serde(default)]
    rules: Vec<PolicyRule>,
    freshness_window: Tick,
    #[serde(default)]
    required_claims: Vec<String>,
}

impl TryFrom<RawPolicy> for EvidencePolicy {
    type Error = PolicyError;

    fn try_from(r: RawPolicy) -> Result<Self, Self::Error> {
        EvidencePolicy::new(r.policy_id, r.rules, r.freshness_window, r.required_claims)
    }
}

impl EvidencePolicy {
    pub fn new(
        policy_id: impl Into<String>,
        rules: Vec<PolicyRule>,
        freshness_window: Tick,
        required_claims: Vec<String>,
    ) -> Result<Self, PolicyError> {
        let policy = EvidencePolicy { policy_id: policy_id.into(), rules, freshness_window, required_claims };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.policy_id.is_empty() {
            return Err(PolicyError::EmptyId);
        }
        if self.freshness_window < 1 {
            return Err(PolicyError::FreshnessWindow);
        }
        let mut seen = std::collections::BTreeSet::new();
        for rule in &self.rules {
            if rule.rule_id.is_empty() {
                return Err(PolicyError::EmptyRuleId);
            }
            if !seen.insert(rule.rule_id.as_str()) {
                return Err(PolicyError::DuplicateRule(rule.rule_id.clone()));
            }
            if let RuleKind::GeoFence { fence } = &rule.kind {
                GeoFence::new(fence.lat_min, fence.lat_max, fence.lon_min, fence.lon_max)?;
            }
        }
        Ok(())
    }

    pub fn rule(&self, rule_id: &str) -> Option<&PolicyRule> {
        self.rules.iter().find(|r| r.rule_id == rule_id)
    }

    pub fn has_components_rule(&self) -> bool {
        self.rules.iter().any(|r| matches!(r.kind, RuleKind::ComponentsAllCompliant))
    }

    /// Digest of the canonical encoding; this is what results and the ledger carry.
    pub fn digest(&self) -> Digest {
        digest(&self.to_canonical_bytes())
    }

    pub fn to_text(&self) -> String {
        crate::model::export::to_sorted_json(self)
    }

    pub fn from_text(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

impl Canonical for EvidencePolicy {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.u8(TAG_POLICY)
            .str(&self.policy_id)
            .list(&self.rules, |e, r| {
                e.encode(r);
            })
            .u64(self.freshness_window)
            .list(&self.required_claims, |e, c| {
                e.str(c);
            });
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.expect_tag("policy", TAG_POLICY)?;
        let policy_id = dec.string()?;
        let rules = dec.list(|d| d.decode())?;
        let freshness_window = dec.u64()?;
        let required_claims = dec.list(|d| d.string())?;
        EvidencePolicy::new(policy_id, rules, freshness_window, required_claims)
            .map_err(|e| DecodeError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawResultPolicy")]
pub struct ResultPolicy {
    pub accepted_verifiers: Vec<EntityId>,
    pub max_result_age: Tick,
    pub required_verdict: Verdict,
}

#[derive(Deserialize)]
struct RawResultPolicy {
    accepted_verifiers: Vec<EntityId>,
    max_result_age: Tick,
    required_verdict: Verdict,
}

impl TryFrom<RawResultPolicy> for ResultPolicy {
    type Error = PolicyError;

    fn try_from(r: RawResultPolicy) -> Result<Self, Self::Error> {
        ResultPolicy::new(r.accepted_verifiers, r.max_result_age, r.required_verdict)
    }
}

impl ResultPolicy {
    pub fn new(
        accepted_verifiers: Vec<EntityId>,
        max_result_age: Tick,
        required_verdict: Verdict,
    ) -> Result<Self, PolicyError> {
        if accepted_verifiers.is_empty() {
            return Err(PolicyError::NoVerifiers);
        }
        Ok(ResultPolicy { accepted_verifiers, max_result_age, required_verdict })
    }

    pub fn to_text(&self) -> String {
        crate::model::export::to_sorted_json(self)
    }

    pub fn from_text(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EvidencePolicy {
        EvidencePolicy::new(
            "p",
            vec![
                PolicyRule::reference_match("kernel", "sw.kernel.digest"),
                PolicyRule::version_at_least("fw", "fw.version", 3),
                PolicyRule::geo_fence("fence", GeoFence::new(-10.0, 10.0, -20.0, 20.0).unwrap()),
                PolicyRule::claim_present("gpu", "gpu.count"),
                PolicyRule::components_all_compliant("parts"),
            ],
            5,
            vec!["hw.model".into()],
        )
        .unwrap()
    }

    #[test]
    fn text_round_trip_and_sorted_keys() {
        let p = sample();
        let text = p.to_text();
        assert_eq!(EvidencePolicy::from_text(&text).unwrap(), p);
        let fw = text.find("\"freshness_window\"").unwrap();
        let id = text.find("\"policy_id\"").unwrap();
        assert!(fw < id);
    }

    #[test]
    fn canonical_round_trip() {
        let p = sample();
        assert_eq!(EvidencePolicy::from_canonical_bytes(&p.to_canonical_bytes()).unwrap(), p);
    }

    #[test]
    fn rejects_bad_policies() {
        assert_eq!(EvidencePolicy::new("p", vec![], 0, vec![]), Err(PolicyError::FreshnessWindow));
        assert!(GeoFence::new(10.0, -10.0, 0.0, 1.0).is_err());
        let dup = vec![PolicyRule::claim_present("a", "x"), PolicyRule::claim_present("a", "y")];
        assert_eq!(EvidencePolicy::new("p", dup, 1, vec![]), Err(PolicyError::DuplicateRule("a".into())));
        let bad = r#"{"policy_id":"p","freshness_window":3,"rules":[{"rule_id":"g","kind":"geo_fence","fence":{"lat_min":5,"lat_max":1,"lon_min":0,"lon_max":1}}]}"#;
        assert!(EvidencePolicy::from_text(bad).is_err());
        assert_eq!(ResultPolicy::new(vec![], 1, Verdict::Compliant), Err(PolicyError::NoVerifiers));
    }

    #[test]
    fn fence_is_inclusive() {
        let f = GeoFence::new(0.0, 1.0, 0.0, 1.0).unwrap();
        assert!(f.contains(&GeoPoint::new(1.0, 0.0, 0.0).unwrap()));
        assert!(!f.contains(&GeoPoint::new(1.0001, 0.0, 0.0).unwrap()));
    }
}
