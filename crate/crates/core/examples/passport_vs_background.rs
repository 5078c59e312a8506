//! The same device, verifier and relying party under both conveyance
//! patterns, with the message transcript of each.

use attest_chain::attester::{sw_claim_key, AttestingEnvironment, SwImage, TargetEnvironment};
use attest_chain::conveyance::{
    run_background_check_flow, run_passport_flow, AttesterParty, InMemoryTransport, RelyingPartyContext,
    VerifierContext,
};
use attest_chain::model::{
    digest, ClaimSet, ClaimValue, Endorsement, EvidencePolicy, GeoPoint, KeyPair, PolicyRule, ResultPolicy, Role,
    Verdict,
};
use attest_chain::verifier::Verifier;

fn main() {
    let geo = GeoPoint::new(0.0, 0.0, 0.0).unwrap();
    let target = TargetEnvironment::new("phone", 7, vec![SwImage::new("os", b"os 14".to_vec())], geo, 0, 0).unwrap();
    let device = AttestingEnvironment::derive(4, "phone", vec![]);
    let vendor = KeyPair::derive(4, Role::Endorser, "vendor").unwrap();
    let claims = ClaimSet::new().with(sw_claim_key("os"), ClaimValue::Digest(digest(b"os 14"))).unwrap();
    let endorsement = Endorsement::issue(&vendor.id, &vendor.key, "phone", claims, true, 0).unwrap();
    let policy =
        EvidencePolicy::new("phone", vec![PolicyRule::reference_match("os.endorsed", sw_claim_key("os"))], 5, vec![])
            .unwrap();
    let verifier = Verifier::from_keys(KeyPair::derive(4, Role::Verifier, "verifier").unwrap()).unwrap();
    let bank = RelyingPartyContext {
        identity: KeyPair::derive(4, Role::RelyingParty, "bank").unwrap().id,
        policy: ResultPolicy::new(vec![verifier.identity().clone()], 5, Verdict::Compliant).unwrap(),
    };
    let mut ctx = VerifierContext::new(verifier, vec![endorsement], policy, 4);
    let party = AttesterParty::honest(&device, &target);

    let passport = run_passport_flow(&party, &mut ctx, &bank, InMemoryTransport::new(), 10).unwrap();
    println!("passport\n{}granted {}\n", passport.transport.transcript_text(), passport.decision.granted);
    let background = run_background_check_flow(&party, &bank, &mut ctx, InMemoryTransport::new(), 20).unwrap();
    println!("background check\n{}granted {}", background.transport.transcript_text(), background.decision.granted);
}
