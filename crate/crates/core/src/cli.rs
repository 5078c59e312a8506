//! Command-line front end. `run` holds all logic so the binary stays thin.
//!
//! Exit codes: 0 ok or compliant, 1 i/o failure, 2 usage or parse error,
//! 3 non_compliant, 4 unknown, 5 ledger integrity failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::attester::{measure, sw_claim_key, AttestingEnvironment, SwImage, TargetEnvironment};
use crate::conveyance::{
    run_background_check_flow, run_passport_flow, AttesterParty, InMemoryTransport, RelyingPartyContext, VerifierContext,
};
use crate::ledger::Ledger;
use crate::model::canonical::{Canonical, DecodeError, Decoder, Encoder};
use crate::model::identity::NONCE_LEN;
use crate::model::{
    digest, AttestationResult, ClaimSet, ClaimValue, Endorsement, EntityId, Evidence, EvidencePolicy, GeoPoint,
    KeyPair, Nonce, PolicyRule, ResultPolicy, Role, SigningKey, Tick, Verdict,
};
use crate::sim::{run_scenario, ScenarioConfig};
use crate::verifier::Verifier;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NON_COMPLIANT: i32 = 3;
pub const EXIT_UNKNOWN: i32 = 4;
pub const EXIT_INTEGRITY: i32 = 5;

const TAG_IDENTITY: u8 = b'I';

#[derive(Parser, Debug)]
#[command(name = "attest-chain", version, about = "Remote attestation and attestation-gated consortium ledger tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Canonical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FlowChoice {
    Passport,
    Background,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Create an identity file holding a role, name and signing key.
    Keygen {
        role: Role,
        name: String,
        #[arg(long)]
        out: PathBuf,
        /// Derive the key from this seed instead of the OS generator.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Issue a signed endorsement of reference claims.
    Endorse {
        #[arg(long)]
        identity: PathBuf,
        #[arg(long)]
        product_id: String,
        /// key=digest:<hex> | key=int:<n> | key=text:<s> | key=file:<path>
        #[arg(long = "claim", required = true)]
        claims: Vec<String>,
        #[arg(long, default_value_t = 0)]
        clock: Tick,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Canonical)]
        format: Format,
    },
    /// Measure a target environment file and sign evidence over it.
    Attest {
        #[arg(long)]
        identity: PathBuf,
        /// Target environment as JSON.
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        nonce: String,
        #[arg(long, default_value_t = 0)]
        clock: Tick,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Canonical)]
        format: Format,
    },
    /// Appraise evidence against endorsements and a policy.
    Appraise {
        evidence: PathBuf,
        #[arg(long = "endorsement")]
        endorsements: Vec<PathBuf>,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        nonce: String,
        /// Appraisal time; defaults to the evidence creation time.
        #[arg(long)]
        clock: Option<Tick>,
        /// Verifier identity file; without it a key is derived from --seed.
        #[arg(long)]
        identity: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Canonical)]
        format: Format,
    },
    /// Run a built-in attester through one conveyance flow and print the transcript.
    Flow {
        #[arg(value_enum)]
        kind: FlowChoice,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run a target whose software differs from the endorsed image.
        #[arg(long)]
        tamper: bool,
    },
    /// Run a scenario and write epoch reports and the ledger export.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Inspect a ledger export.
    Ledger {
        #[command(subcommand)]
        action: LedgerAction,
    },
}

#[derive(Subcommand, Debug)]
enum LedgerAction {
    Inspect {
        file: PathBuf,
        #[arg(long, conflicts_with = "verify")]
        height: Option<u64>,
        #[arg(long)]
        verify: bool,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

/// Identity file contents: role, name and the 32-byte signing seed.
pub fn identity_to_bytes(keys: &KeyPair) -> Vec<u8> {
    let mut enc = Encoder::with_tag(TAG_IDENTITY);
    enc.u8(keys.id.role.tag()).str(&keys.id.name).fixed(&keys.key.to_seed());
    enc.finish()
}

pub fn identity_from_bytes(bytes: &[u8]) -> Result<KeyPair, DecodeError> {
    let mut dec = Decoder::new(bytes);
    dec.expect_tag("identity", TAG_IDENTITY)?;
    let tag = dec.u8()?;
    let role = Role::from_tag(tag).ok_or(DecodeError::BadTag { what: "role", tag })?;
    let name = dec.string()?;
    let seed: [u8; 32] = dec.array()?;
    dec.finish()?;
    KeyPair::new(role, name, SigningKey::from_seed(seed)).map_err(|e| DecodeError::Invalid(e.to_string()))
}

struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure { code: EXIT_USAGE, message: format!("{}: {e}", path.display()) })
}

/// Binary files may also be given hex-encoded.
fn read_binary(path: &Path) -> Result<Vec<u8>, Failure> {
    let raw = read(path)?;
    match std::str::from_utf8(&raw).ok().map(str::trim) {
        Some(text) if !text.is_empty() && text.bytes().all(|b| b.is_ascii_hexdigit()) => {
            hex::decode(text).map_err(|e| usage(format!("{}: {e}", path.display())))
        }
        _ => Ok(raw),
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    String::from_utf8(read(path)?).map_err(|_| usage(format!("{}: not UTF-8 text", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| io_failure(path, e))
}

fn load_identity(path: &Path) -> Result<KeyPair, Failure> {
    identity_from_bytes(&read_binary(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn parse_nonce(text: &str) -> Result<[u8; NONCE_LEN], Failure> {
    let bytes = hex::decode(text.trim()).map_err(|e| usage(format!("nonce: {e}")))?;
    bytes.try_into().map_err(|_| usage(format!("nonce must be {NONCE_LEN} bytes of hex")))
}

fn parse_claim(spec: &str) -> Result<(String, ClaimValue), Failure> {
    let bad = || usage(format!("claim {spec:?}: expected key=type:value"));
    let (key, rest) = spec.split_once('=').ok_or_else(bad)?;
    let (kind, value) = rest.split_once(':').ok_or_else(bad)?;
    let value = match kind {
        "digest" => ClaimValue::Digest(crate::model::Digest::from_hex(value).map_err(|_| bad())?),
        "int" => ClaimValue::Integer(value.parse().map_err(|_| bad())?),
        "text" => ClaimValue::Text(value.to_string()),
        "file" => ClaimValue::Digest(digest(&read(Path::new(value))?)),
        _ => return Err(bad()),
    };
    Ok((key.to_string(), value))
}

fn render_result(r: &AttestationResult) -> String {
    let mut out = format!(
        "verifier: {}\nattester: {}\nverdict: {}\npolicy_digest: {}\nnonce: {}\ncreated_at: {}\n",
        r.verifier.name,
        r.attester.name,
        r.verdict.as_str(),
        r.policy_digest,
        hex::encode(r.appraised_nonce.value),
        r.created_at
    );
    for reason in &r.reasons {
        out.push_str(&format!("reason: {reason}\n"));
    }
    out
}

fn encode_for(format: Format, canonical: Vec<u8>) -> Vec<u8> {
    match format {
        Format::Canonical => canonical,
        Format::Text => format!("{}\n", hex::encode(canonical)).into_bytes(),
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32, Failure> {
    match cli.command {
        Command::Keygen { role, name, out: path, seed } => {
            if name.is_empty() {
                return Err(usage("name must be non-empty"));
            }
            let keys = match seed {
                Some(seed) => KeyPair::derive(seed, role, &name),
                None => KeyPair::generate(role, name, &mut rand::rngs::OsRng),
            }
            .map_err(|e| usage(e.to_string()))?;
            write(&path, &identity_to_bytes(&keys))?;
            let _ = writeln!(out, "{} {}", keys.id, hex::encode(keys.id.public_key.as_bytes()));
            Ok(EXIT_OK)
        }
        Command::Endorse { identity, product_id, claims, clock, out: path, format } => {
            let keys = load_identity(&identity)?;
            let mut set = ClaimSet::new();
            for spec in &claims {
                let (k, v) = parse_claim(spec)?;
                set.insert(k, v).map_err(|e| usage(e.to_string()))?;
            }
            let e = Endorsement::issue(&keys.id, &keys.key, product_id, set, true, clock).map_err(|e| usage(e.to_string()))?;
            write(&path, &encode_for(format, e.to_bytes()))?;
            let _ = writeln!(out, "endorsement {}", digest(&e.to_bytes()));
            Ok(EXIT_OK)
        }
        Command::Attest { identity, env, nonce, clock, out: path, format } => {
            let keys = load_identity(&identity)?;
            let target: TargetEnvironment =
                serde_json::from_str(&read_text(&env)?).map_err(|e| usage(format!("{}: {e}", env.display())))?;
            target.validate().map_err(|e| usage(e.to_string()))?;
            let nonce = Nonce { value: parse_nonce(&nonce)?, issued_at: clock };
            let evidence = Evidence::unsigned(keys.id.clone(), measure(&target), nonce, clock)
                .sign(&keys.key)
                .map_err(|e| usage(e.to_string()))?;
            write(&path, &encode_for(format, evidence.to_bytes()))?;
            let _ = writeln!(out, "evidence {}", digest(&evidence.to_bytes()));
            Ok(EXIT_OK)
        }
        Command::Appraise { evidence, endorsements, policy, nonce, clock, identity, seed, out: path, format } => {
            let ev_bytes = read_binary(&evidence)?;
            let ev = Evidence::from_bytes(&ev_bytes).map_err(|e| usage(format!("{}: {e}", evidence.display())))?;
            let endorsements = endorsements
                .iter()
                .map(|p| Endorsement::from_bytes(&read_binary(p)?).map_err(|e| usage(format!("{}: {e}", p.display()))))
                .collect::<Result<Vec<_>, _>>()?;
            let policy =
                EvidencePolicy::from_text(&read_text(&policy)?).map_err(|e| usage(format!("{}: {e}", policy.display())))?;
            let expected = Nonce { value: parse_nonce(&nonce)?, issued_at: ev.nonce_echo.issued_at };
            let keys = match identity {
                Some(p) => load_identity(&p)?,
                None => KeyPair::derive(seed, Role::Verifier, "verifier").expect("non-empty name"),
            };
            let verifier = Verifier::from_keys(keys).expect("identity key matches its seed");
            let result =
                verifier.appraise_evidence(&ev, &endorsements, &policy, &expected, clock.unwrap_or(ev.created_at));
            if let Some(path) = path {
                let bytes = match format {
                    Format::Canonical => result.to_bytes(),
                    Format::Text => render_result(&result).into_bytes(),
                };
                write(&path, &bytes)?;
            }
            let _ = writeln!(out, "verdict {}", result.verdict.as_str());
            for reason in &result.reasons {
                let _ = writeln!(out, "{reason}");
            }
            Ok(match result.verdict {
                Verdict::Compliant => EXIT_OK,
                Verdict::NonCompliant => EXIT_NON_COMPLIANT,
                Verdict::Unknown => EXIT_UNKNOWN,
            })
        }
        Command::Flow { kind, seed, tamper } => {
            let report = demo_flow(kind, seed, tamper);
            let _ = write!(out, "{}", report.transport.transcript_text());
            let _ = writeln!(out, "granted {}", report.decision.granted);
            for reason in &report.decision.reasons {
                let _ = writeln!(out, "{reason}");
            }
            Ok(if report.decision.granted { EXIT_OK } else { EXIT_NON_COMPLIANT })
        }
        Command::Simulate { scenario, out: dir, seed } => {
            let text = read_text(&scenario)?;
            let mut config =
                ScenarioConfig::from_text(&text).map_err(|e| usage(format!("{}: {e}", scenario.display())))?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let outcome = run_scenario(&config).map_err(|e| usage(e.to_string()))?;
            fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
            let ledger = outcome.universe.ledger();
            write(&dir.join("reports.json"), outcome.reports_text().as_bytes())?;
            write(&dir.join("ledger.hex"), ledger.export_canonical().as_bytes())?;
            write(&dir.join("ledger.txt"), ledger.render_text().as_bytes())?;
            for r in &outcome.reports {
                let _ = writeln!(
                    out,
                    "epoch {} majority {} diversity {:.4} validator {}",
                    r.epoch,
                    r.majority,
                    r.diversity,
                    r.validator.as_deref().unwrap_or("none")
                );
            }
            let _ = writeln!(out, "tip {}", ledger.tip_digest());
            Ok(EXIT_OK)
        }
        Command::Ledger { action: LedgerAction::Inspect { file, height, verify, format } } => {
            let text = read_text(&file)?;
            let ledger = match Ledger::import_canonical(&text) {
                Ok(l) => l,
                Err(e) => {
                    let _ = writeln!(out, "integrity failure: {e}");
                    return Ok(EXIT_INTEGRITY);
                }
            };
            if verify {
                return Ok(match ledger.verify() {
                    Ok(()) => {
                        let _ = writeln!(out, "ok {} blocks, tip {}", ledger.len(), ledger.tip_digest());
                        EXIT_OK
                    }
                    Err(e) => {
                        let _ = writeln!(out, "integrity failure: {e}");
                        EXIT_INTEGRITY
                    }
                });
            }
            let blocks: Vec<_> = match height {
                Some(h) => {
                    let block = ledger.blocks().get(h as usize).ok_or_else(|| {
                        usage(format!("height {h} beyond tip {}", ledger.len().saturating_sub(1)))
                    })?;
                    vec![block]
                }
                None => ledger.blocks().iter().collect(),
            };
            for b in blocks {
                match format {
                    Format::Text => {
                        let _ = write!(out, "{}", Ledger::render_block(b));
                    }
                    Format::Canonical => {
                        let _ = writeln!(out, "{}", hex::encode(b.to_canonical_bytes()));
                    }
                }
            }
            Ok(EXIT_OK)
        }
    }
}

/// A one-image attester, its endorsement, a verifier and a relying party,
/// all derived from `seed`.
fn demo_flow(kind: FlowChoice, seed: u64, tamper: bool) -> crate::conveyance::FlowReport {
    const IMAGE: &[u8] = b"firmware 1.0";
    let running: &[u8] = if tamper { b"firmware 1.0 (patched)" } else { IMAGE };
    let target = TargetEnvironment::new(
        "demo-board",
        1,
        vec![SwImage::new("fw", running.to_vec())],
        GeoPoint::new(0.0, 0.0, 0.0).expect("valid"),
        0,
        1,
    )
    .expect("single image");
    let attester = AttestingEnvironment::derive(seed, "device", vec![]);
    let maker = KeyPair::derive(seed, Role::Endorser, "vendor").expect("non-empty name");
    let claims = ClaimSet::new().with(sw_claim_key("fw"), ClaimValue::Digest(digest(IMAGE))).expect("non-empty key");
    let endorsement = Endorsement::issue(&maker.id, &maker.key, "demo-board", claims, true, 0).expect("keys match");
    let policy = EvidencePolicy::new("demo", vec![PolicyRule::reference_match("fw.match", sw_claim_key("fw"))], 5, vec![])
        .expect("valid policy");
    let verifier = Verifier::from_keys(KeyPair::derive(seed, Role::Verifier, "verifier").expect("non-empty name"))
        .expect("keys match");
    let rp_id: EntityId = KeyPair::derive(seed, Role::RelyingParty, "service").expect("non-empty name").id;
    let rp = RelyingPartyContext {
        identity: rp_id,
        policy: ResultPolicy::new(vec![verifier.identity().clone()], 5, Verdict::Compliant).expect("one verifier"),
    };
    let mut vctx = VerifierContext::new(verifier, vec![endorsement], policy, seed);
    let party = AttesterParty::honest(&attester, &target);
    let result = match kind {
        FlowChoice::Passport => run_passport_flow(&party, &mut vctx, &rp, InMemoryTransport::new(), 1),
        FlowChoice::Background => run_background_check_flow(&party, &rp, &mut vctx, InMemoryTransport::new(), 1),
    };
    result.expect("in-memory transport does not fail")
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
