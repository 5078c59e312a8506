//! A manufacturer notarizes a firmware endorsement, then goes out of
//! business. Buyers can still tell genuine firmware from an altered copy.

use attest_chain::endorsement::{register_endorsement, verification_objects, verify_product, ContentStore};
use attest_chain::ledger::Ledger;
use attest_chain::model::{KeyPair, Role};

fn main() {
    let root_ca = KeyPair::derive(6, Role::Endorser, "root-ca").unwrap();
    let maker = KeyPair::derive(6, Role::Endorser, "acme").unwrap();
    let firmware = b"acme router firmware 3.4.1".to_vec();

    let mut store = ContentStore::new();
    let mut ledger = Ledger::new();
    let objects = verification_objects(&root_ca, &maker, "acme-router", &firmware, 1);
    let record = register_endorsement(&maker, "acme-router", &objects, &mut store, &mut ledger, 1).unwrap();
    println!("registered {} objects under root {}", record.object_refs.len(), record.merkle_root);
    for r in &record.object_refs {
        println!("  {:<18} {}", r.label, r.content_address);
    }

    let manufacturer_active = false;
    let genuine = verify_product(&firmware, &record, &store, &ledger, manufacturer_active);
    println!("genuine copy: {} {:?}", genuine.is_genuine(), genuine.codes());

    let mut altered = firmware.clone();
    altered[0] ^= 1;
    let check = verify_product(&altered, &record, &store, &ledger, manufacturer_active);
    println!("altered copy: {} {:?}", check.is_genuine(), check.codes());
}
