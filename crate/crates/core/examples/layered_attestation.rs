//! Boot-chain attestation: each layer's key derives from its parent's
//! secret and its own measurement, so a modified layer changes every key
//! identity from that layer upward.

use attest_chain::attester::AttestingEnvironment;
use attest_chain::model::{digest, new_nonce, Digest, EvidencePolicy, KeyPair, Role, UniverseRng};
use attest_chain::verifier::{DeviceSecretRegistry, Verifier};
use rand::SeedableRng;

fn main() {
    let mut rng = UniverseRng::seed_from_u64(2);
    let board = AttestingEnvironment::derive(2, "board", vec![]);
    let mut registry = DeviceSecretRegistry::new();
    registry.register(board.identity().clone(), board.provisioned_device_secret());

    let golden_images: [&[u8]; 4] = [b"rom", b"bootloader 2.1", b"kernel 6.1", b"app 3.0"];
    let golden: Vec<Digest> = golden_images.iter().map(|i| digest(i)).collect();
    let verifier = Verifier::from_keys(KeyPair::derive(2, Role::Verifier, "verifier").unwrap()).unwrap();
    let policy = EvidencePolicy::new("boot", vec![], 5, vec![]).unwrap();

    let mut running = golden_images.to_vec();
    println!("honest boot");
    for round in 0..2 {
        let nonce = new_nonce(0, &mut rng);
        let evidence = board.build_layered_evidence(&running, nonce, 0).unwrap();
        for layer in evidence.layer_chain.as_deref().unwrap() {
            println!("  layer {} key id {}", layer.index, &layer.layer_key_id.to_hex()[..16]);
        }
        let result = verifier.appraise_layered(&evidence, &golden, &registry, &[], &policy, &nonce, 0);
        println!("  verdict {} {:?}", result.verdict.as_str(), result.reasons);
        if round == 0 {
            running[2] = b"kernel 6.1 (patched)";
            println!("patched kernel at layer 2");
        }
    }
}
