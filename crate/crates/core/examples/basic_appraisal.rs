//! Appraise evidence from a device against a vendor endorsement, then run
//! the same device with a patched kernel.

use attest_chain::attester::{sw_claim_key, AttestingEnvironment, SwImage, TargetEnvironment};
use attest_chain::model::{
    digest, new_nonce, ClaimSet, ClaimValue, Endorsement, EvidencePolicy, GeoPoint, KeyPair, PolicyRule, Role,
    UniverseRng,
};
use attest_chain::verifier::Verifier;
use rand::SeedableRng;

fn main() {
    let mut rng = UniverseRng::seed_from_u64(1);
    let vendor = KeyPair::derive(1, Role::Endorser, "vendor").unwrap();
    let claims = ClaimSet::new()
        .with(sw_claim_key("kernel"), ClaimValue::Digest(digest(b"kernel 6.1")))
        .unwrap();
    let endorsement = Endorsement::issue(&vendor.id, &vendor.key, "gateway", claims, true, 0).unwrap();

    let policy = EvidencePolicy::new(
        "gateway-v1",
        vec![
            PolicyRule::reference_match("kernel.endorsed", sw_claim_key("kernel")),
            PolicyRule::version_at_least("fw.recent", "fw.version", 4),
        ],
        10,
        vec!["hw.model".into()],
    )
    .unwrap();
    let verifier = Verifier::from_keys(KeyPair::derive(1, Role::Verifier, "verifier").unwrap()).unwrap();
    let device = AttestingEnvironment::derive(1, "gateway-17", vec![]);

    for kernel in [&b"kernel 6.1"[..], b"kernel 6.1 + rootkit"] {
        let target = TargetEnvironment::new(
            "gw-x2",
            5,
            vec![SwImage::new("kernel", kernel.to_vec())],
            GeoPoint::new(48.1, 11.6, 520.0).unwrap(),
            0,
            0,
        )
        .unwrap();
        let nonce = new_nonce(100, &mut rng);
        let evidence = device.generate_evidence(&target, nonce, 101).unwrap();
        let result = verifier.appraise_evidence(&evidence, std::slice::from_ref(&endorsement), &policy, &nonce, 102);
        println!("{:?}: {} {:?}", String::from_utf8_lossy(kernel), result.verdict.as_str(), result.reasons);
    }
}
