//! Random case generation and an appraisal oracle written without reusing
//! the verifier's rule code.

#![allow(dead_code)]

use std::collections::BTreeMap;

use attest_chain::attester::{sw_claim_key, AttestingEnvironment, SwImage, TargetEnvironment};
use attest_chain::model::{
    digest, new_nonce, ClaimSet, ClaimValue, Endorsement, Evidence, EvidencePolicy, GeoFence, GeoPoint, KeyPair,
    Nonce, PolicyRule, Role, Signed, Tick, UniverseRng, Verdict,
};
use rand::seq::SliceRandom;
use sha2::{Digest as _, Sha256};
use rand::Rng;

pub const IMAGE_NAMES: [&str; 3] = ["os", "app", "boot"];
pub const IMAGE_TEXTS: [&str; 3] = ["v1", "v2", "v3"];

pub struct Case {
    pub attester: AttestingEnvironment,
    pub target: TargetEnvironment,
    pub endorsements: Vec<Endorsement>,
    pub policy: EvidencePolicy,
    pub expected_nonce: Nonce,
    pub evidence: Evidence,
    pub clock: Tick,
}

pub fn random_target(rng: &mut UniverseRng) -> TargetEnvironment {
    let mut names = IMAGE_NAMES.to_vec();
    names.shuffle(rng);
    let count = rng.gen_range(1..=names.len());
    let images = names[..count]
        .iter()
        .map(|n| SwImage::new(*n, IMAGE_TEXTS.choose(rng).unwrap().as_bytes().to_vec()))
        .collect();
    let geo = GeoPoint::new(rng.gen_range(-60.0..60.0), rng.gen_range(-120.0..120.0), 0.0).unwrap();
    TargetEnvironment::new(
        ["hw-a", "hw-b"].choose(rng).unwrap().to_string(),
        rng.gen_range(0..5),
        images,
        geo,
        rng.gen_range(0..3),
        rng.gen_range(0..10),
    )
    .unwrap()
}

pub fn random_endorsements(rng: &mut UniverseRng, seed: u64) -> Vec<Endorsement> {
    (0..rng.gen_range(0..4))
        .map(|i| {
            let maker = KeyPair::derive(seed, Role::Endorser, &format!("maker-{i}")).unwrap();
            let mut claims = ClaimSet::new();
            for name in IMAGE_NAMES {
                if rng.gen_bool(0.6) {
                    let text = IMAGE_TEXTS.choose(rng).unwrap();
                    claims.insert(sw_claim_key(name), ClaimValue::Digest(digest(text.as_bytes()))).unwrap();
                }
            }
            if rng.gen_bool(0.3) {
                claims.insert("hw.model", ClaimValue::Text(["hw-a", "hw-b"].choose(rng).unwrap().to_string())).unwrap();
            }
            let mut e = Endorsement::issue(&maker.id, &maker.key, format!("p{i}"), claims, true, rng.gen_range(0..4)).unwrap();
            if rng.gen_bool(0.1) {
                e.signature[0] ^= 1;
            }
            e
        })
        .collect()
}

pub fn random_fence(rng: &mut UniverseRng) -> GeoFence {
    let (a, b) = (rng.gen_range(-70.0..70.0), rng.gen_range(-70.0..70.0));
    let (c, d) = (rng.gen_range(-150.0..150.0), rng.gen_range(-150.0..150.0));
    GeoFence::new(f64::min(a, b), f64::max(a, b), f64::min(c, d), f64::max(c, d)).unwrap()
}

pub fn random_policy(rng: &mut UniverseRng) -> EvidencePolicy {
    let claim_keys = ["sw.os.digest", "sw.app.digest", "sw.boot.digest", "hw.model", "gpu.count", "absent"];
    let rules = (0..rng.gen_range(0..5))
        .map(|i| {
            let id = format!("r{i}");
            match rng.gen_range(0..4) {
                0 => PolicyRule::reference_match(id, *claim_keys[..4].choose(rng).unwrap()),
                1 => PolicyRule::version_at_least(id, "fw.version", rng.gen_range(0..5)),
                2 => PolicyRule::geo_fence(id, random_fence(rng)),
                _ => PolicyRule::claim_present(id, *claim_keys.choose(rng).unwrap()),
            }
        })
        .collect();
    let required = claim_keys.iter().filter(|_| rng.gen_bool(0.15)).map(|k| k.to_string()).collect();
    EvidencePolicy::new("random", rules, rng.gen_range(1..10), required).unwrap()
}

pub fn random_case(rng: &mut UniverseRng, seed: u64) -> Case {
    let target = random_target(rng);
    let attester = AttestingEnvironment::derive(seed, "attester", vec![]);
    let endorsements = random_endorsements(rng, seed);
    let policy = random_policy(rng);
    let t0 = rng.gen_range(0..20);
    let expected_nonce = new_nonce(t0, rng);
    let echoed = if rng.gen_bool(0.9) { expected_nonce } else { new_nonce(t0, rng) };
    let mut evidence = attester.generate_evidence(&target, echoed, t0).unwrap();
    if rng.gen_bool(0.05) {
        evidence.signature[5] ^= 0x10;
    }
    let clock = t0 + rng.gen_range(0..12);
    Case { attester, target, endorsements, policy, expected_nonce, evidence, clock }
}

/// Reference values: among signature-valid endorsements, each claim takes
/// the value with the greatest issued_at, later list position on ties.
fn oracle_references(endorsements: &[Endorsement]) -> BTreeMap<String, ClaimValue> {
    let mut valid: Vec<(usize, &Endorsement)> = endorsements.iter().enumerate().filter(|(_, e)| e.verify()).collect();
    valid.sort_by_key(|(i, e)| (e.issued_at, *i));
    let mut refs = BTreeMap::new();
    for (_, e) in valid {
        for (k, v) in e.reference_claims.iter() {
            refs.insert(k.to_string(), v.clone());
        }
    }
    refs
}

/// Independent statement of the appraisal semantics.
pub fn oracle_appraise(
    evidence: &Evidence,
    endorsements: &[Endorsement],
    policy: &EvidencePolicy,
    nonce: &Nonce,
    clock: Tick,
) -> (Verdict, Vec<String>) {
    use attest_chain::model::RuleKind;
    let mut reasons: Vec<String> = Vec::new();
    let mut cannot_judge = false;
    if !evidence.verify() {
        reasons.push("sig".into());
    }
    if evidence.nonce_echo.value != nonce.value {
        reasons.push("nonce".into());
    }
    if clock > evidence.nonce_echo.issued_at && clock - evidence.nonce_echo.issued_at > policy.freshness_window {
        reasons.push("stale".into());
    }
    let claims = &evidence.target_claims;
    if policy.required_claims.iter().filter(|k| claims.get(k).is_none()).count() > 0 {
        reasons.push("missing_claim".into());
    }
    let refs = oracle_references(endorsements);
    for rule in &policy.rules {
        let ok = match &rule.kind {
            RuleKind::ReferenceMatch { claim } => match refs.get(claim) {
                None => {
                    cannot_judge = true;
                    false
                }
                Some(v) => claims.get(claim) == Some(v),
            },
            RuleKind::VersionAtLeast { claim, bound } => {
                matches!(claims.get(claim), Some(ClaimValue::Integer(v)) if v >= bound)
            }
            RuleKind::GeoFence { fence } => match claims.get("geo") {
                Some(ClaimValue::Geo(g)) => {
                    g.lat() >= fence.lat_min && g.lat() <= fence.lat_max && g.lon() >= fence.lon_min && g.lon() <= fence.lon_max
                }
                _ => false,
            },
            RuleKind::ClaimPresent { claim } => claims.get(claim).is_some(),
            RuleKind::ComponentsAllCompliant => {
                if evidence.components.as_ref().is_some_and(|c| !c.is_empty()) {
                    reasons.push(rule.rule_id.clone());
                    reasons.push("components.unappraised".into());
                }
                true
            }
        };
        if !ok {
            reasons.push(rule.rule_id.clone());
        }
    }
    let verdict = match (reasons.is_empty(), cannot_judge) {
        (true, _) => Verdict::Compliant,
        (false, true) => Verdict::Unknown,
        (false, false) => Verdict::NonCompliant,
    };
    (verdict, reasons)
}

/// Flips bit `bit` (mod length) of `bytes`.
pub fn flip_bit(bytes: &mut [u8], bit: usize) {
    let bit = bit % (bytes.len() * 8);
    bytes[bit / 8] ^= 1 << (bit % 8);
}

/// HMAC-SHA-256 spelled out over the raw hash.
pub fn hmac_sha256(key: &[u8; 32], msg: &[u8]) -> [u8; 32] {
    let mut block = [0u8; 64];
    block[..32].copy_from_slice(key);
    let ipad: Vec<u8> = block.iter().map(|b| b ^ 0x36).collect();
    let opad: Vec<u8> = block.iter().map(|b| b ^ 0x5c).collect();
    let inner = Sha256::new().chain_update(&ipad).chain_update(msg).finalize();
    Sha256::new().chain_update(&opad).chain_update(inner).finalize().into()
}

/// Verifier and relying-party contexts for a flow run over `case`.
pub fn flow_contexts(
    case: &Case,
    seed: u64,
) -> (attest_chain::conveyance::VerifierContext, attest_chain::conveyance::RelyingPartyContext) {
    use attest_chain::model::ResultPolicy;
    let verifier = attest_chain::verifier::Verifier::from_keys(KeyPair::derive(seed, Role::Verifier, "v").unwrap()).unwrap();
    let rp = attest_chain::conveyance::RelyingPartyContext {
        identity: KeyPair::derive(seed, Role::RelyingParty, "rp").unwrap().id,
        policy: ResultPolicy::new(vec![verifier.identity().clone()], 5, Verdict::Compliant).unwrap(),
    };
    let ctx = attest_chain::conveyance::VerifierContext::new(verifier, case.endorsements.clone(), case.policy.clone(), seed);
    (ctx, rp)
}
