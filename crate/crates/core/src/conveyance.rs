//! The two conveyance patterns as explicit message exchanges: passport
//! (the attester carries the signed result to the relying party) and
//! background check (the relying party forwards evidence and receives the
//! result directly).
//!
//! Every message crosses an [`InMemoryTransport`] as a canonical frame, so
//! tampering and pass-through integrity are observable at the byte level.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use thiserror::Error;

use crate::attester::{AttesterError, AttestingEnvironment, TargetEnvironment};
use crate::model::canonical::{Canonical, DecodeError, Decoder, Encoder};
use crate::model::identity::NONCE_LEN;
use crate::model::{
    digest, new_nonce, AttestationResult, Endorsement, EntityId, EvidencePolicy, Evidence, Nonce, ResultPolicy,
    Tick, UniverseRng, Verdict,
};
use crate::verifier::{result_failures, Verifier};

const TAG_FLOW: u8 = b'F';

pub const REASON_REPLAY: &str = "replay";
pub const REASON_MALFORMED: &str = "malformed";

#[derive(Debug, Clone, PartialEq)]
pub enum FlowMessage {
    AccessRequest { sender: EntityId, resource_id: String },
    ChallengeNonce { sender: EntityId, nonce: Nonce },
    EvidenceMsg { sender: EntityId, evidence: Evidence },
    ResultMsg { sender: EntityId, result: AttestationResult },
    Decision { sender: EntityId, granted: bool, reasons: Vec<String> },
}

impl FlowMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            FlowMessage::AccessRequest { .. } => "access_request",
            FlowMessage::ChallengeNonce { .. } => "challenge_nonce",
            FlowMessage::EvidenceMsg { .. } => "evidence",
            FlowMessage::ResultMsg { .. } => "result",
            FlowMessage::Decision { .. } => "decision",
        }
    }

    pub fn sender(&self) -> &EntityId {
        match self {
            FlowMessage::AccessRequest { sender, .. }
            | FlowMessage::ChallengeNonce { sender, .. }
            | FlowMessage::EvidenceMsg { sender, .. }
            | FlowMessage::ResultMsg { sender, .. }
            | FlowMessage::Decision { sender, .. } => sender,
        }
    }
}

impl Canonical for FlowMessage {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.u8(TAG_FLOW);
        match self {
            FlowMessage::AccessRequest { sender, resource_id } => {
                enc.u8(0).encode(sender).str(resource_id);
            }
            FlowMessage::ChallengeNonce { sender, nonce } => {
                enc.u8(1).encode(sender).encode(nonce);
            }
            // Payloads travel as their own signed encodings.
            FlowMessage::EvidenceMsg { sender, evidence } => {
                enc.u8(2).encode(sender).bytes(&evidence.to_bytes());
            }
            FlowMessage::ResultMsg { sender, result } => {
                enc.u8(3).encode(sender).bytes(&result.to_bytes());
            }
            FlowMessage::Decision { sender, granted, reasons } => {
                enc.u8(4).encode(sender).bool(*granted).list(reasons, |e, r| {
                    e.str(r);
                });
            }
        }
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.expect_tag("flow message", TAG_FLOW)?;
        let kind = dec.u8()?;
        let sender = dec.decode()?;
        Ok(match kind {
            0 => FlowMessage::AccessRequest { sender, resource_id: dec.string()? },
            1 => FlowMessage::ChallengeNonce { sender, nonce: dec.decode()? },
            2 => FlowMessage::EvidenceMsg { sender, evidence: Evidence::from_bytes(&dec.bytes()?)? },
            3 => FlowMessage::ResultMsg { sender, result: AttestationResult::from_bytes(&dec.bytes()?)? },
            4 => FlowMessage::Decision { sender, granted: dec.bool()?, reasons: dec.list(|d| d.string())? },
            tag => return Err(DecodeError::BadTag { what: "flow message kind", tag }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("channel closed before message {seq} from {from} to {to}")]
    Closed { seq: usize, from: String, to: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub seq: usize,
    pub from: String,
    pub to: String,
    pub kind: String,
    pub frame: Vec<u8>,
}

/// Reliable, ordered in-memory channel. Records every delivered frame.
/// `fail_at` closes the channel at a given message sequence number.
#[derive(Debug, Clone, Default)]
pub struct InMemoryTransport {
    transcript: Vec<TranscriptEntry>,
    pub fail_at: Option<usize>,
}

impl InMemoryTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn failing_at(seq: usize) -> Self {
        InMemoryTransport { transcript: Vec::new(), fail_at: Some(seq) }
    }

    /// Delivers `frame` and returns the bytes the receiver gets.
    pub fn send(&mut self, from: &str, to: &str, kind: &str, frame: Vec<u8>) -> Result<Vec<u8>, TransportError> {
        let seq = self.transcript.len();
        if self.fail_at == Some(seq) {
            return Err(TransportError::Closed { seq, from: from.into(), to: to.into() });
        }
        self.transcript.push(TranscriptEntry {
            seq,
            from: from.into(),
            to: to.into(),
            kind: kind.into(),
            frame: frame.clone(),
        });
        Ok(frame)
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    /// One line per message: sequence, route, kind, frame length and digest.
    pub fn transcript_text(&self) -> String {
        let mut out = String::new();
        for e in &self.transcript {
            let _ = writeln!(
                out,
                "{:03} {} -> {} {} len={} sha256={}",
                e.seq,
                e.from,
                e.to,
                e.kind,
                e.frame.len(),
                digest(&e.frame)
            );
        }
        out
    }
}

/// Per-verifier set of nonce values already accepted in evidence.
/// Clones share the same set.
#[derive(Debug, Clone, Default)]
pub struct ReplayCache(Arc<Mutex<HashSet<[u8; NONCE_LEN]>>>);

impl ReplayCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Atomically records `value`; false if it was already present.
    pub fn check_and_insert(&self, value: [u8; NONCE_LEN]) -> bool {
        self.0.lock().expect("replay cache poisoned").insert(value)
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("replay cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct VerifierContext {
    pub verifier: Verifier,
    pub endorsements: Vec<Endorsement>,
    pub policy: EvidencePolicy,
    replay: ReplayCache,
    rng: UniverseRng,
}

impl VerifierContext {
    pub fn new(verifier: Verifier, endorsements: Vec<Endorsement>, policy: EvidencePolicy, seed: u64) -> Self {
        VerifierContext { verifier, endorsements, policy, replay: ReplayCache::new(), rng: UniverseRng::seed_from_u64(seed) }
    }

    /// A context for a concurrent session: same verifier and replay cache,
    /// independent nonce stream.
    pub fn fork(&self, stream: u64) -> Self {
        let mut rng = self.rng.clone();
        rng.set_stream(stream);
        VerifierContext {
            verifier: self.verifier.clone(),
            endorsements: self.endorsements.clone(),
            policy: self.policy.clone(),
            replay: self.replay.clone(),
            rng,
        }
    }

    pub fn replay_cache(&self) -> &ReplayCache {
        &self.replay
    }

    fn challenge(&mut self, clock: Tick) -> Nonce {
        new_nonce(clock, &mut self.rng)
    }

    /// Appraises evidence under the issued nonce, or refuses a reused one.
    fn respond(&self, evidence: &Evidence, issued: &Nonce, clock: Tick) -> Result<AttestationResult, Vec<String>> {
        if !self.replay.check_and_insert(evidence.nonce_echo.value) {
            return Err(vec![REASON_REPLAY.to_string()]);
        }
        Ok(self.verifier.appraise_evidence(evidence, &self.endorsements, &self.policy, issued, clock))
    }
}

#[derive(Debug, Clone)]
pub struct RelyingPartyContext {
    pub identity: EntityId,
    pub policy: ResultPolicy,
}

impl RelyingPartyContext {
    /// Result-policy failures, followed by the verifier's reasons when the
    /// verdict itself is unacceptable.
    fn decide(&self, result: &AttestationResult, clock: Tick) -> (bool, Vec<String>) {
        let mut reasons: Vec<String> = result_failures(result, &self.policy, clock).into_iter().map(String::from).collect();
        if result.verdict != Verdict::Compliant {
            reasons.extend(result.reasons.iter().cloned());
        }
        (reasons.is_empty(), reasons)
    }
}

/// How the attester behaves during a session.
#[derive(Debug, Clone, Default)]
pub enum AttesterConduct {
    #[default]
    Honest,
    /// Sends this previously produced evidence instead of fresh evidence.
    Replay(Evidence),
    /// Flips one bit of the result payload before forwarding it (passport).
    FlipResultBit(usize),
    /// Holds the evidence for this many ticks before it reaches the verifier.
    Delay(Tick),
}

pub struct AttesterParty<'a> {
    pub env: &'a AttestingEnvironment,
    pub target: &'a TargetEnvironment,
    pub conduct: AttesterConduct,
}

impl<'a> AttesterParty<'a> {
    pub fn honest(env: &'a AttestingEnvironment, target: &'a TargetEnvironment) -> Self {
        AttesterParty { env, target, conduct: AttesterConduct::Honest }
    }

    fn evidence(&self, nonce: Nonce, clock: Tick) -> Result<Evidence, AttesterError> {
        match &self.conduct {
            AttesterConduct::Replay(old) => Ok(old.clone()),
            _ => self.env.generate_evidence(self.target, nonce, clock),
        }
    }

    fn delay(&self) -> Tick {
        match self.conduct {
            AttesterConduct::Delay(d) => d,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlowError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Attester(#[from] AttesterError),
    #[error("{flow} flow: illegal transition {from:?} -> {to:?}")]
    Protocol { flow: FlowKind, from: Phase, to: Phase },
    #[error("expected {expected} frame, received {got}")]
    Unexpected { expected: &'static str, got: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    Passport,
    BackgroundCheck,
}

impl fmt::Display for FlowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowKind::Passport => "passport",
            FlowKind::BackgroundCheck => "background-check",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Start,
    NonceRequested,
    Challenged,
    EvidenceSent,
    /// Passport only: the attester holds the signed result.
    ResultHeld,
    ResultDelivered,
    Decided,
}

impl FlowKind {
    fn allows(self, from: Phase, to: Phase) -> bool {
        use Phase::*;
        match (from, to) {
            (Start, NonceRequested) | (NonceRequested, Challenged) | (Challenged, EvidenceSent) => true,
            // A refused (replayed or malformed) submission ends the session.
            (EvidenceSent, Decided) => true,
            (EvidenceSent, ResultHeld) | (ResultHeld, ResultDelivered) => self == FlowKind::Passport,
            (EvidenceSent, ResultDelivered) => self == FlowKind::BackgroundCheck,
            (ResultDelivered, Decided) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub granted: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub session_id: u64,
    pub flow: FlowKind,
    pub phase: Phase,
    pub issued_nonce: Option<Nonce>,
    pub outcome: Option<Decision>,
}

impl SessionState {
    pub fn new(session_id: u64, flow: FlowKind) -> Self {
        SessionState { session_id, flow, phase: Phase::Start, issued_nonce: None, outcome: None }
    }

    fn advance(&mut self, to: Phase) -> Result<(), FlowError> {
        if !self.flow.allows(self.phase, to) {
            return Err(FlowError::Protocol { flow: self.flow, from: self.phase, to });
        }
        self.phase = to;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FlowReport {
    pub decision: Decision,
    /// The verifier's verdict, absent when the evidence was refused.
    pub verdict: Option<Verdict>,
    /// Result bytes as emitted by the verifier and as received by the relying party.
    pub emitted_result: Option<Vec<u8>>,
    pub received_result: Option<Vec<u8>>,
    pub session: SessionState,
    pub transport: InMemoryTransport,
}

fn send(t: &mut InMemoryTransport, from: &EntityId, to: &EntityId, msg: &FlowMessage) -> Result<Vec<u8>, FlowError> {
    Ok(t.send(&from.name, &to.name, msg.kind(), msg.to_canonical_bytes())?)
}

fn receive(frame: &[u8]) -> Result<FlowMessage, Vec<String>> {
    FlowMessage::from_canonical_bytes(frame).map_err(|_| vec![REASON_MALFORMED.to_string()])
}

fn expect_nonce(msg: FlowMessage) -> Result<Nonce, FlowError> {
    match msg {
        FlowMessage::ChallengeNonce { nonce, .. } => Ok(nonce),
        other => Err(FlowError::Unexpected { expected: "challenge_nonce", got: other.kind().into() }),
    }
}

fn flip_payload_bit(frame: &mut [u8], payload_len: usize, bit: usize) {
    let start = frame.len() - payload_len;
    let bit = bit % (payload_len * 8);
    frame[start + bit / 8] ^= 1 << (bit % 8);
}

struct Outcome {
    granted: bool,
    reasons: Vec<String>,
}

fn finish(
    mut session: SessionState,
    transport: InMemoryTransport,
    outcome: Outcome,
    verdict: Option<Verdict>,
    emitted_result: Option<Vec<u8>>,
    received_result: Option<Vec<u8>>,
) -> Result<FlowReport, FlowError> {
    session.advance(Phase::Decided)?;
    let decision = Decision { granted: outcome.granted, reasons: outcome.reasons };
    session.outcome = Some(decision.clone());
    Ok(FlowReport { decision, verdict, emitted_result, received_result, session, transport })
}

/// Attester obtains a nonce from the verifier, submits evidence, receives
/// the signed result and presents it to the relying party.
pub fn run_passport_flow(
    attester: &AttesterParty<'_>,
    verifier: &mut VerifierContext,
    rp: &RelyingPartyContext,
    transport: InMemoryTransport,
    clock: Tick,
) -> Result<FlowReport, FlowError> {
    let mut t = transport;
    let mut s = SessionState::new(0, FlowKind::Passport);
    let a_id = attester.env.identity().clone();
    let v_id = verifier.verifier.identity().clone();

    send(&mut t, &a_id, &v_id, &FlowMessage::AccessRequest { sender: a_id.clone(), resource_id: "challenge".into() })?;
    s.advance(Phase::NonceRequested)?;

    let nonce = verifier.challenge(clock);
    s.issued_nonce = Some(nonce);
    let frame = send(&mut t, &v_id, &a_id, &FlowMessage::ChallengeNonce { sender: v_id.clone(), nonce })?;
    let nonce = expect_nonce(receive(&frame).map_err(|_| FlowError::Unexpected {
        expected: "challenge_nonce",
        got: REASON_MALFORMED.into(),
    })?)?;
    s.advance(Phase::Challenged)?;

    let evidence = attester.evidence(nonce, clock)?;
    let frame = send(&mut t, &a_id, &v_id, &FlowMessage::EvidenceMsg { sender: a_id.clone(), evidence })?;
    s.advance(Phase::EvidenceSent)?;

    let appraised_at = clock + attester.delay();
    let response = match receive(&frame) {
        Ok(FlowMessage::EvidenceMsg { evidence, .. }) => {
            verifier.respond(&evidence, s.issued_nonce.as_ref().expect("nonce issued"), appraised_at)
        }
        Ok(other) => return Err(FlowError::Unexpected { expected: "evidence", got: other.kind().into() }),
        Err(reasons) => Err(reasons),
    };
    let result = match response {
        Ok(result) => result,
        Err(reasons) => {
            let msg = FlowMessage::Decision { sender: v_id.clone(), granted: false, reasons: reasons.clone() };
            send(&mut t, &v_id, &a_id, &msg)?;
            return finish(s, t, Outcome { granted: false, reasons }, None, None, None);
        }
    };
    let verdict = result.verdict;
    let emitted = result.to_bytes();
    let held = send(&mut t, &v_id, &a_id, &FlowMessage::ResultMsg { sender: v_id.clone(), result })?;
    s.advance(Phase::ResultHeld)?;

    // The attester re-originates the frame; the signed payload, which is the
    // frame's tail, is carried unchanged unless the attester misbehaves.
    let result = match receive(&held) {
        Ok(FlowMessage::ResultMsg { result, .. }) => result,
        _ => return Err(FlowError::Unexpected { expected: "result", got: REASON_MALFORMED.into() }),
    };
    let mut forward = FlowMessage::ResultMsg { sender: a_id.clone(), result }.to_canonical_bytes();
    if let AttesterConduct::FlipResultBit(bit) = attester.conduct {
        flip_payload_bit(&mut forward, emitted.len(), bit);
    }
    let rp_id = &rp.identity;
    let frame = t.send(&a_id.name, &rp_id.name, "result", forward)?;
    s.advance(Phase::ResultDelivered)?;

    let (outcome, received) = match receive(&frame) {
        Ok(FlowMessage::ResultMsg { result, .. }) => {
            let (granted, reasons) = rp.decide(&result, appraised_at);
            (Outcome { granted, reasons }, Some(result.to_bytes()))
        }
        Ok(other) => return Err(FlowError::Unexpected { expected: "result", got: other.kind().into() }),
        Err(reasons) => (Outcome { granted: false, reasons }, None),
    };
    let msg = FlowMessage::Decision { sender: rp_id.clone(), granted: outcome.granted, reasons: outcome.reasons.clone() };
    send(&mut t, rp_id, &a_id, &msg)?;
    finish(s, t, outcome, Some(verdict), Some(emitted), received)
}

/// Attester talks only to the relying party, which relays the verifier's
/// challenge, forwards the evidence and receives the result directly.
pub fn run_background_check_flow(
    attester: &AttesterParty<'_>,
    rp: &RelyingPartyContext,
    verifier: &mut VerifierContext,
    transport: InMemoryTransport,
    clock: Tick,
) -> Result<FlowReport, FlowError> {
    let mut t = transport;
    let mut s = SessionState::new(0, FlowKind::BackgroundCheck);
    let a_id = attester.env.identity().clone();
    let v_id = verifier.verifier.identity().clone();
    let rp_id = rp.identity.clone();

    send(&mut t, &a_id, &rp_id, &FlowMessage::AccessRequest { sender: a_id.clone(), resource_id: "resource".into() })?;
    send(&mut t, &rp_id, &v_id, &FlowMessage::AccessRequest { sender: rp_id.clone(), resource_id: "challenge".into() })?;
    s.advance(Phase::NonceRequested)?;

    let nonce = verifier.challenge(clock);
    s.issued_nonce = Some(nonce);
    send(&mut t, &v_id, &rp_id, &FlowMessage::ChallengeNonce { sender: v_id.clone(), nonce })?;
    let frame = send(&mut t, &rp_id, &a_id, &FlowMessage::ChallengeNonce { sender: rp_id.clone(), nonce })?;
    let nonce = expect_nonce(receive(&frame).map_err(|_| FlowError::Unexpected {
        expected: "challenge_nonce",
        got: REASON_MALFORMED.into(),
    })?)?;
    s.advance(Phase::Challenged)?;

    let evidence = attester.evidence(nonce, clock)?;
    let frame = send(&mut t, &a_id, &rp_id, &FlowMessage::EvidenceMsg { sender: a_id.clone(), evidence })?;
    s.advance(Phase::EvidenceSent)?;

    let appraised_at = clock + attester.delay();
    let forwarded = match receive(&frame) {
        Ok(FlowMessage::EvidenceMsg { evidence, .. }) => {
            send(&mut t, &rp_id, &v_id, &FlowMessage::EvidenceMsg { sender: rp_id.clone(), evidence })?
        }
        Ok(other) => return Err(FlowError::Unexpected { expected: "evidence", got: other.kind().into() }),
        Err(reasons) => {
            let msg = FlowMessage::Decision { sender: rp_id.clone(), granted: false, reasons: reasons.clone() };
            send(&mut t, &rp_id, &a_id, &msg)?;
            return finish(s, t, Outcome { granted: false, reasons }, None, None, None);
        }
    };
    let response = match receive(&forwarded) {
        Ok(FlowMessage::EvidenceMsg { evidence, .. }) => {
            verifier.respond(&evidence, s.issued_nonce.as_ref().expect("nonce issued"), appraised_at)
        }
        Ok(other) => return Err(FlowError::Unexpected { expected: "evidence", got: other.kind().into() }),
        Err(reasons) => Err(reasons),
    };
    let result = match response {
        Ok(result) => result,
        Err(reasons) => {
            let refusal = FlowMessage::Decision { sender: v_id.clone(), granted: false, reasons: reasons.clone() };
            send(&mut t, &v_id, &rp_id, &refusal)?;
            let msg = FlowMessage::Decision { sender: rp_id.clone(), granted: false, reasons: reasons.clone() };
            send(&mut t, &rp_id, &a_id, &msg)?;
            return finish(s, t, Outcome { granted: false, reasons }, None, None, None);
        }
    };
    let verdict = result.verdict;
    let emitted = result.to_bytes();
    let frame = send(&mut t, &v_id, &rp_id, &FlowMessage::ResultMsg { sender: v_id.clone(), result })?;
    s.advance(Phase::ResultDelivered)?;

    let (outcome, received) = match receive(&frame) {
        Ok(FlowMessage::ResultMsg { result, .. }) => {
            let (granted, reasons) = rp.decide(&result, appraised_at);
            (Outcome { granted, reasons }, Some(result.to_bytes()))
        }
        Ok(other) => return Err(FlowError::Unexpected { expected: "result", got: other.kind().into() }),
        Err(reasons) => (Outcome { granted: false, reasons }, None),
    };
    let msg = FlowMessage::Decision { sender: rp_id.clone(), granted: outcome.granted, reasons: outcome.reasons.clone() };
    send(&mut t, &rp_id, &a_id, &msg)?;
    finish(s, t, outcome, Some(verdict), Some(emitted), received)
}
