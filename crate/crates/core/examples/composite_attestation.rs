//! A chassis controller collects evidence from two line cards and conveys
//! it as one bundle; each card is appraised against its own plan.

use attest_chain::attester::{sw_claim_key, AttestingEnvironment, SwImage, TargetEnvironment};
use attest_chain::model::{
    digest, new_nonce, ClaimSet, ClaimValue, Endorsement, EvidencePolicy, GeoPoint, KeyPair, PolicyRule, Role,
    UniverseRng,
};
use attest_chain::verifier::{AppraisalPlan, Verifier};
use rand::SeedableRng;

fn board(image: &[u8]) -> TargetEnvironment {
    let geo = GeoPoint::new(0.0, 0.0, 0.0).unwrap();
    TargetEnvironment::new("card", 2, vec![SwImage::new("fw", image.to_vec())], geo, 0, 0).unwrap()
}

fn main() {
    let mut rng = UniverseRng::seed_from_u64(3);
    let vendor = KeyPair::derive(3, Role::Endorser, "vendor").unwrap();
    let claims = ClaimSet::new().with(sw_claim_key("fw"), ClaimValue::Digest(digest(b"card fw 9"))).unwrap();
    let endorsement = Endorsement::issue(&vendor.id, &vendor.key, "card", claims, true, 0).unwrap();
    let card_policy =
        EvidencePolicy::new("card", vec![PolicyRule::reference_match("fw.endorsed", sw_claim_key("fw"))], 5, vec![])
            .unwrap();
    let lead_policy =
        EvidencePolicy::new("chassis", vec![PolicyRule::components_all_compliant("cards")], 5, vec![]).unwrap();
    let card_plan = AppraisalPlan::leaf(vec![endorsement], card_policy);
    let plan = AppraisalPlan { endorsements: vec![], policy: lead_policy, components: vec![card_plan.clone(), card_plan] };

    let lead = AttestingEnvironment::derive(3, "chassis", vec![]);
    let cards = [AttestingEnvironment::derive(3, "card-a", vec![]), AttestingEnvironment::derive(3, "card-b", vec![])];
    let verifier = Verifier::from_keys(KeyPair::derive(3, Role::Verifier, "verifier").unwrap()).unwrap();

    for images in [[&b"card fw 9"[..], b"card fw 9"], [b"card fw 9", b"card fw 8"]] {
        let nonce = new_nonce(0, &mut rng);
        let components = cards
            .iter()
            .zip(images)
            .map(|(card, image)| card.generate_evidence(&board(image), nonce, 0).unwrap())
            .collect();
        let bundle = lead.collate_composite(&board(b"chassis fw"), components, nonce, 1).unwrap();
        let result = verifier.appraise_composite(&bundle, &plan, &nonce, 1);
        println!("{} {:?}", result.verdict.as_str(), result.reasons);
    }
}
