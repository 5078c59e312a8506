//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use attest_chain::attester::{layer_chain, AttestingEnvironment};
use attest_chain::conveyance::{run_background_check_flow, run_passport_flow, AttesterParty, InMemoryTransport};
use attest_chain::endorsement::{
    merkle_prove, merkle_root, merkle_verify, register_endorsement, verification_objects, verify_product,
    ContentStore,
};
use attest_chain::ledger::Ledger;
use attest_chain::model::{
    digest, new_nonce, AttestationResult, Digest, Evidence, EvidencePolicy, KeyPair, Role, Signed, UniverseRng,
    Verdict,
};
use attest_chain::sim::{apply_fault, run_scenario, Mutation, ScenarioConfig, Universe};
use attest_chain::verifier::{DeviceSecretRegistry, Verifier};
use rand::{Rng, SeedableRng};
use serde_json::Value;

const ROUNDS: u32 = 10_000;
const GOVERNANCE_BUDGET: Duration = Duration::from_secs(5);
const GATING_BUDGET: Duration = Duration::from_secs(10);
const STAKE_TOLERANCE: f64 = 0.03;
const FLOW_TRIALS: u64 = 1_000;
const TAMPER_TRIALS: usize = 100;
const LAYER_TRIALS: usize = 500;
const APPRAISAL_TRIALS: u64 = 1_000;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn load_scenario(name: &str) -> ScenarioConfig {
    let text = std::fs::read_to_string(scenario_dir().join(format!("{name}.json"))).unwrap();
    ScenarioConfig::from_text(&text).unwrap()
}

fn fixture(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn hex32(v: &Value) -> [u8; 32] {
    hex::decode(v.as_str().unwrap()).unwrap().try_into().unwrap()
}

fn governance_switch() -> Outcome {
    let started = Instant::now();
    let config = load_scenario("clone-attack");
    let outcome = run_scenario(&config).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let first_low = outcome
        .reports
        .iter()
        .position(|r| r.diversity < config.diversity_threshold)
        .ok_or("diversity never fell below the threshold")?;
    for (i, r) in outcome.reports.iter().enumerate() {
        let want = if i < first_low { 51 } else { 70 };
        ensure(r.majority == want, || format!("epoch {} majority {} expected {want}", r.epoch, r.majority))?;
    }
    ensure(elapsed < GOVERNANCE_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("51 -> 70 at epoch {} in {:.2?}", outcome.reports[first_low].epoch, elapsed))
}

/// Healthy universe after bootstrap, with `faulty` nodes given a modified
/// OS image and stakes overridden, appraised once at tick 10.
fn appraised_universe(stakes: &[(&str, u64)], faulty: &[&str]) -> Universe {
    let mut config = load_scenario("healthy-4nodes");
    for node in config.domains.iter_mut().flat_map(|d| d.nodes.iter_mut()) {
        if let Some((_, s)) = stakes.iter().find(|(id, _)| *id == node.node_id) {
            node.stake = *s;
        }
    }
    let mut u = config.build().unwrap();
    u.bootstrap();
    for id in faulty {
        apply_fault(&mut u, id, &Mutation::FlipSwByte { image: "os".into(), offset: 0 });
    }
    u.run_epoch(10);
    u
}

fn selection_counts(u: &mut Universe) -> std::collections::BTreeMap<String, u32> {
    let mut counts = std::collections::BTreeMap::new();
    for _ in 0..ROUNDS {
        let seed = u.next_round_seed();
        *counts.entry(u.select_validator(seed, 10).unwrap()).or_insert(0) += 1;
    }
    counts
}

fn consensus_gating() -> Outcome {
    let started = Instant::now();
    // The faulty node carries the largest stake so any leak would show.
    let mut u = appraised_universe(&[("b2", 1_000)], &["b2"]);
    ensure(u.eligible_nodes(10).len() == 3, || "expected three eligible nodes".into())?;
    let counts = selection_counts(&mut u);
    let elapsed = started.elapsed();
    let picked = counts.get("b2").copied().unwrap_or(0);
    ensure(picked == 0, || format!("non-compliant node selected {picked} times"))?;
    ensure(elapsed < GATING_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("non-compliant node selected 0/{ROUNDS} times in {elapsed:.2?}"))
}

fn stake_proportionality() -> Outcome {
    let mut u = appraised_universe(&[("a1", 1), ("a2", 3)], &["b1", "b2"]);
    let counts = selection_counts(&mut u);
    let total = f64::from(ROUNDS);
    let low = f64::from(counts.get("a1").copied().unwrap_or(0)) / total;
    let high = f64::from(counts.get("a2").copied().unwrap_or(0)) / total;
    ensure((low - 0.25).abs() <= STAKE_TOLERANCE && (high - 0.75).abs() <= STAKE_TOLERANCE, || {
        format!("shares {low:.4} / {high:.4}")
    })?;
    Ok(format!("shares {low:.4} / {high:.4} (tolerance {STAKE_TOLERANCE})"))
}

fn flow_equivalence() -> Outcome {
    let mut rng = UniverseRng::seed_from_u64(0xF10E);
    let mut granted = 0;
    for seed in 0..FLOW_TRIALS {
        let c = common::random_case(&mut rng, seed);
        let party = AttesterParty::honest(&c.attester, &c.target);
        let (mut v1, rp) = common::flow_contexts(&c, seed);
        let (mut v2, _) = common::flow_contexts(&c, seed);
        let p = run_passport_flow(&party, &mut v1, &rp, InMemoryTransport::new(), c.clock).map_err(|e| e.to_string())?;
        let b = run_background_check_flow(&party, &rp, &mut v2, InMemoryTransport::new(), c.clock)
            .map_err(|e| e.to_string())?;
        ensure(p.verdict == b.verdict && p.decision.granted == b.decision.granted, || {
            format!("trial {seed}: passport {:?}/{} vs background {:?}/{}", p.verdict, p.decision.granted, b.verdict, b.decision.granted)
        })?;
        granted += usize::from(p.decision.granted);
    }
    ensure(granted > 0 && granted < FLOW_TRIALS as usize, || format!("degenerate sample: {granted} granted"))?;
    Ok(format!("{FLOW_TRIALS} trials, 0 discrepancies, {granted} granted"))
}

fn tamper_suite() -> Outcome {
    let mut rng = UniverseRng::seed_from_u64(0x7A3);
    let keys = KeyPair::derive(5, Role::Attester, "dev").unwrap();
    let attester = AttestingEnvironment::derive(5, "dev", vec![]);
    let target = common::random_target(&mut rng);
    let nonce = new_nonce(1, &mut rng);
    let evidence = attester.generate_evidence(&target, nonce, 1).unwrap();
    assert_eq!(evidence.attester, keys.id);
    let verifier = Verifier::from_keys(KeyPair::derive(5, Role::Verifier, "v").unwrap()).unwrap();
    let policy = EvidencePolicy::new("p", vec![], 5, vec![]).unwrap();
    let result = verifier.appraise_evidence(&evidence, &[], &policy, &nonce, 2);

    let mut missed = Vec::new();
    let flip = |bytes: &[u8], rng: &mut UniverseRng| {
        let mut b = bytes.to_vec();
        common::flip_bit(&mut b, rng.gen());
        b
    };
    for _ in 0..TAMPER_TRIALS {
        let b = flip(&evidence.to_bytes(), &mut rng);
        if Evidence::from_bytes(&b).is_ok_and(|e| e.verify()) {
            missed.push("evidence");
        }
        let b = flip(&result.to_bytes(), &mut rng);
        if AttestationResult::from_bytes(&b).is_ok_and(|r| r.verify()) {
            missed.push("result");
        }
    }

    let ledger = run_scenario(&load_scenario("clone-attack")).unwrap().universe.ledger().clone();
    let lines: Vec<Vec<u8>> = ledger.export_canonical().lines().map(|l| hex::decode(l).unwrap()).collect();
    for _ in 0..TAMPER_TRIALS {
        let mut tampered = lines.clone();
        let i = rng.gen_range(0..tampered.len());
        tampered[i] = flip(&tampered[i], &mut rng);
        let text: String = tampered.iter().map(|l| hex::encode(l) + "\n").collect();
        if Ledger::import_canonical(&text).and_then(|l| l.verify()).is_ok() {
            missed.push("ledger");
        }
    }

    let ca = KeyPair::derive(5, Role::Endorser, "root-ca").unwrap();
    let maker = KeyPair::derive(5, Role::Endorser, "maker").unwrap();
    let product = b"controller firmware 4.2".to_vec();
    let mut store = ContentStore::new();
    let mut notary = Ledger::new();
    let objects = verification_objects(&ca, &maker, "ctl", &product, 0);
    let record = register_endorsement(&maker, "ctl", &objects, &mut store, &mut notary, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    store.save_dir(dir.path()).unwrap();
    let files: Vec<PathBuf> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
    for _ in 0..TAMPER_TRIALS {
        let path = &files[rng.gen_range(0..files.len())];
        let original = std::fs::read(path).unwrap();
        std::fs::write(path, flip(&original, &mut rng)).unwrap();
        let loaded = ContentStore::load_dir(dir.path()).unwrap();
        if verify_product(&product, &record, &loaded, &notary, false).is_genuine() {
            missed.push("stored object");
        }
        std::fs::write(path, original).unwrap();
    }
    ensure(missed.is_empty(), || format!("undetected: {missed:?}"))?;
    Ok(format!("{TAMPER_TRIALS} flips each of evidence, results, ledger blocks, stored objects; all detected"))
}

/// Chain of layer key ids recomputed with the spelled-out keyed hash.
fn oracle_key_ids(device_secret: [u8; 32], measurements: &[Digest]) -> Vec<Digest> {
    let mut secret = device_secret;
    measurements
        .iter()
        .map(|m| {
            secret = common::hmac_sha256(&secret, &m.0);
            digest(&secret)
        })
        .collect()
}

fn layered_suffix() -> Outcome {
    let doc = fixture("keyed_hash_chain.json");
    let patterned = &doc["patterned_secret_four_layers"];
    let chain = patterned["chain"].as_array().unwrap();
    let measurements: Vec<Digest> = chain.iter().map(|e| Digest(hex32(&e["measurement"]))).collect();
    let frozen: Vec<[u8; 32]> = chain.iter().map(|e| hex32(&e["layer_key_id"])).collect();
    let computed: Vec<[u8; 32]> =
        oracle_key_ids(hex32(&patterned["device_secret"]), &measurements).iter().map(|d| d.0).collect();
    ensure(computed == frozen, || "spelled-out keyed hash disagrees with frozen vectors".into())?;

    let mut rng = UniverseRng::seed_from_u64(0x1A7E);
    let verifier = Verifier::from_keys(KeyPair::derive(9, Role::Verifier, "v").unwrap()).unwrap();
    let policy = EvidencePolicy::new("layers", vec![], 5, vec![]).unwrap();
    for trial in 0..LAYER_TRIALS {
        let attester = AttestingEnvironment::derive(trial as u64, "board", vec![]);
        let mut registry = DeviceSecretRegistry::new();
        registry.register(attester.identity().clone(), attester.provisioned_device_secret());
        let golden_images: Vec<Vec<u8>> = (0..4).map(|_| (0..rng.gen_range(1..24)).map(|_| rng.gen()).collect()).collect();
        let golden: Vec<Digest> = golden_images.iter().map(|i| digest(i)).collect();
        let tampered_layer = rng.gen_range(0..4);
        let mut running = golden_images.clone();
        running[tampered_layer].push(rng.gen());

        let nonce = new_nonce(0, &mut rng);
        let evidence = attester.build_layered_evidence(&running, nonce, 0).unwrap();
        let result = verifier.appraise_layered(&evidence, &golden, &registry, &[], &policy, &nonce, 0);
        let want_reason = format!("layer.{tampered_layer}");
        ensure(result.verdict == Verdict::NonCompliant && result.reasons.first() == Some(&want_reason), || {
            format!("trial {trial}: {:?} {:?}, expected first reason {want_reason}", result.verdict, result.reasons)
        })?;

        let secret = attester.provisioned_device_secret();
        let expected = oracle_key_ids(secret, &golden);
        let measured: Vec<Digest> = running.iter().map(|i| digest(i)).collect();
        let reported: Vec<Digest> = evidence.layer_chain.as_deref().unwrap().iter().map(|l| l.layer_key_id).collect();
        ensure(reported == oracle_key_ids(secret, &measured), || format!("trial {trial}: chain differs from oracle"))?;
        ensure(layer_chain(&secret, &measured).iter().map(|l| l.layer_key_id).eq(reported.iter().copied()), || {
            format!("trial {trial}: library chain differs")
        })?;
        let diverged: Vec<usize> = (0..4).filter(|&i| reported[i] != expected[i]).collect();
        ensure(diverged == (tampered_layer..4).collect::<Vec<_>>(), || {
            format!("trial {trial}: tampered {tampered_layer}, diverged at {diverged:?}")
        })?;
    }
    Ok(format!("{LAYER_TRIALS} four-layer trials, 0 mismatches"))
}

fn merkle_equivalence() -> Outcome {
    let doc = fixture("merkle_vectors.json");
    let trees = doc["trees"].as_array().unwrap();
    let mut proofs = 0;
    for tree in trees {
        let leaves: Vec<Digest> = tree["leaves"].as_array().unwrap().iter().map(|l| Digest(hex32(l))).collect();
        let root = merkle_root(&leaves).map_err(|e| e.to_string())?;
        ensure(root.0 == hex32(&tree["root"]), || format!("root mismatch for {} leaves", leaves.len()))?;
        for (i, want) in tree["proofs"].as_array().unwrap().iter().enumerate() {
            let proof = merkle_prove(&leaves, i).map_err(|e| e.to_string())?;
            let want: Vec<[u8; 32]> = want.as_array().unwrap().iter().map(hex32).collect();
            let got: Vec<[u8; 32]> = proof.siblings.iter().map(|d| d.0).collect();
            ensure(got == want && merkle_verify(&root, &leaves[i], i, &proof), || {
                format!("proof {i} of {} leaves", leaves.len())
            })?;
            proofs += 1;
        }
    }
    let sizes: Vec<u64> = trees.iter().map(|t| t["leaf_count"].as_u64().unwrap()).collect();
    ensure(sizes == (1..=8).collect::<Vec<_>>(), || format!("fixture covers {sizes:?}"))?;
    Ok(format!("trees of 1-8 leaves, {proofs} proofs identical"))
}

fn appraisal_equivalence() -> Outcome {
    let mut rng = UniverseRng::seed_from_u64(0xACCE);
    let verifier = Verifier::from_keys(KeyPair::derive(1, Role::Verifier, "v").unwrap()).unwrap();
    let mut seen = std::collections::BTreeMap::new();
    for i in 0..APPRAISAL_TRIALS {
        let c = common::random_case(&mut rng, i);
        let r = verifier.appraise_evidence(&c.evidence, &c.endorsements, &c.policy, &c.expected_nonce, c.clock);
        let (verdict, reasons) =
            common::oracle_appraise(&c.evidence, &c.endorsements, &c.policy, &c.expected_nonce, c.clock);
        ensure(r.verdict == verdict && r.reasons == reasons, || {
            format!("case {i}: {:?} {:?} vs oracle {verdict:?} {reasons:?}", r.verdict, r.reasons)
        })?;
        *seen.entry(verdict.as_str()).or_insert(0) += 1;
    }
    Ok(format!("{APPRAISAL_TRIALS} cases, 0 disagreements {seen:?}"))
}

fn determinism() -> Outcome {
    let mut names: Vec<String> = std::fs::read_dir(scenario_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension()? == "json").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    for name in &names {
        let config = load_scenario(name);
        let a = run_scenario(&config).map_err(|e| e.to_string())?;
        let b = run_scenario(&config).map_err(|e| e.to_string())?;
        let (la, lb) = (a.universe.ledger(), b.universe.ledger());
        ensure(la.export_canonical() == lb.export_canonical() && la.tip_digest() == lb.tip_digest(), || {
            format!("{name} differs between runs")
        })?;
    }
    Ok(format!("{} scenarios byte-identical across runs", names.len()))
}

fn endorsement_longevity() -> Outcome {
    let ca = KeyPair::derive(2, Role::Endorser, "root-ca").unwrap();
    let maker = KeyPair::derive(2, Role::Endorser, "maker").unwrap();
    let product = b"sensor firmware 1.3".to_vec();
    let mut store = ContentStore::new();
    let mut ledger = Ledger::new();
    let objects = verification_objects(&ca, &maker, "sensor", &product, 1);
    let record = register_endorsement(&maker, "sensor", &objects, &mut store, &mut ledger, 1).unwrap();
    let genuine = verify_product(&product, &record, &store, &ledger, false);
    ensure(genuine.is_genuine(), || format!("genuine product rejected: {:?}", genuine.codes()))?;
    let mut altered = product.clone();
    altered[3] ^= 0x40;
    let verdict = verify_product(&altered, &record, &store, &ledger, false);
    ensure(verdict.codes() == ["digest_mismatch"], || format!("altered product gave {:?}", verdict.codes()))?;
    Ok("genuine accepted without manufacturer; altered byte gives digest_mismatch".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("AC1 governance switch", governance_switch),
        ("AC2 consensus gating", consensus_gating),
        ("AC3 stake proportionality", stake_proportionality),
        ("AC4 flow equivalence", flow_equivalence),
        ("AC5 tamper detection", tamper_suite),
        ("AC6 layered suffix", layered_suffix),
        ("AC7 merkle oracle", merkle_equivalence),
        ("AC8 appraisal oracle", appraisal_equivalence),
        ("AC9 determinism", determinism),
        ("AC10 endorsement longevity", endorsement_longevity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
