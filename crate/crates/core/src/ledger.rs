//! Append-only, hash-linked ledger shared by the consortium simulator and
//! the endorsements ledger.
//!
//! Block digest = SHA-256 of the block's canonical content (everything but
//! the digest itself). Genesis has height 0 and an all-zero parent digest.
//! The export format is one hex-encoded canonical block per line.

use std::fmt::Write as _;

use thiserror::Error;

use crate::endorsement::EndorsementRecord;
use crate::model::canonical::{Canonical, DecodeError, Decoder, Encoder};
use crate::model::{digest, Digest, PublicKey, Signed, SigningKey, Tick, Verdict};

pub const TAG_BLOCK: u8 = b'B';
const TAG_TX: u8 = b'X';

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntegrityError {
    #[error("line {line}: undecodable block: {source}")]
    Decode { line: usize, source: DecodeError },
    #[error("block at position {position} has height {height}")]
    Height { position: usize, height: u64 },
    #[error("block {height}: parent digest does not link")]
    Link { height: u64 },
    #[error("block {height}: digest does not recompute")]
    Digest { height: u64 },
}

/// A user transaction, signed by its originator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub originator: PublicKey,
    pub payload: Vec<u8>,
    pub signature: Vec<u8>,
}

impl Transaction {
    pub fn new(key: &SigningKey, payload: impl Into<Vec<u8>>) -> Self {
        let mut tx = Transaction { originator: key.public_key(), payload: payload.into(), signature: Vec::new() };
        tx.signature = key.sign(&tx.signing_image());
        tx
    }
}

impl Signed for Transaction {
    fn signing_image(&self) -> Vec<u8> {
        let mut enc = Encoder::with_tag(TAG_TX);
        enc.encode(&self.originator).bytes(&self.payload);
        enc.finish()
    }

    fn signature(&self) -> &[u8] {
        &self.signature
    }

    fn signer(&self) -> &PublicKey {
        &self.originator
    }
}

impl Canonical for Transaction {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.encode(&self.originator).bytes(&self.payload).bytes(&self.signature);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Transaction { originator: dec.decode()?, payload: dec.bytes()?, signature: dec.bytes()? })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LedgerRecord {
    PolicyDigest { scope: String, policy_id: String, digest: Digest },
    PolicyConflict { domain_id: String, rule_id: String },
    AuditDigest { domain_id: String, first_entry: u64, entry_count: u64, digest: Digest },
    Endorsement(EndorsementRecord),
    Transaction(Transaction),
    ResultDigest { node_id: String, verdict: Verdict, digest: Digest },
    Governance { epoch: u64, distinct_configs: u64, node_count: u64, majority: u8 },
    Halt { tick: Tick },
    Remuneration { node_id: String, tx_count: u64 },
}

impl LedgerRecord {
    pub fn kind(&self) -> &'static str {
        match self {
            LedgerRecord::PolicyDigest { .. } => "policy_digest",
            LedgerRecord::PolicyConflict { .. } => "policy.conflict",
            LedgerRecord::AuditDigest { .. } => "audit_digest",
            LedgerRecord::Endorsement(_) => "endorsement_record",
            LedgerRecord::Transaction(_) => "transaction",
            LedgerRecord::ResultDigest { .. } => "result_digest",
            LedgerRecord::Governance { .. } => "governance",
            LedgerRecord::Halt { .. } => "halt",
            LedgerRecord::Remuneration { .. } => "remuneration",
        }
    }

    pub fn describe(&self) -> String {
        match self {
            LedgerRecord::PolicyDigest { scope, policy_id, digest } => {
                format!("policy_digest scope={scope} policy={policy_id} digest={digest}")
            }
            LedgerRecord::PolicyConflict { domain_id, rule_id } => {
                format!("policy.conflict domain={domain_id} rule={rule_id}")
            }
            LedgerRecord::AuditDigest { domain_id, first_entry, entry_count, digest } => format!(
                "audit_digest domain={domain_id} entries={first_entry}..{} digest={digest}",
                first_entry + entry_count
            ),
            LedgerRecord::Endorsement(r) => format!(
                "endorsement_record manufacturer={} product={} root={} objects={}",
                r.manufacturer.name,
                r.product_id,
                r.merkle_root,
                r.object_refs.len()
            ),
            LedgerRecord::Transaction(tx) => format!(
                "transaction originator={} payload={}B",
                &tx.originator.to_hex()[..16.min(tx.originator.to_hex().len())],
                tx.payload.len()
            ),
            LedgerRecord::ResultDigest { node_id, verdict, digest } => {
                format!("result_digest node={node_id} verdict={verdict} digest={digest}")
            }
            LedgerRecord::Governance { epoch, distinct_configs, node_count, majority } => format!(
                "governance epoch={epoch} diversity={distinct_configs}/{node_count} majority={majority}"
            ),
            LedgerRecord::Halt { tick } => format!("halt tick={tick}"),
            LedgerRecord::Remuneration { node_id, tx_count } => {
                format!("remuneration node={node_id} txs={tx_count}")
            }
        }
    }
}

impl Canonical for LedgerRecord {
    fn encode_to(&self, enc: &mut Encoder) {
        match self {
            LedgerRecord::PolicyDigest { scope, policy_id, digest } => {
                enc.u8(0).str(scope).str(policy_id).encode(digest);
            }
            LedgerRecord::PolicyConflict { domain_id, rule_id } => {
                enc.u8(1).str(domain_id).str(rule_id);
            }
            LedgerRecord::AuditDigest { domain_id, first_entry, entry_count, digest } => {
                enc.u8(2).str(domain_id).u64(*first_entry).u64(*entry_count).encode(digest);
            }
            LedgerRecord::Endorsement(r) => {
                enc.u8(3).encode(r);
            }
            LedgerRecord::Transaction(tx) => {
                enc.u8(4).encode(tx);
            }
            LedgerRecord::ResultDigest { node_id, verdict, digest } => {
                let v = match verdict {
                    Verdict::Compliant => 0,
                    Verdict::NonCompliant => 1,
                    Verdict::Unknown => 2,
                };
                enc.u8(5).str(node_id).u8(v).encode(digest);
            }
            LedgerRecord::Governance { epoch, distinct_configs, node_count, majority } => {
                enc.u8(6).u64(*epoch).u64(*distinct_configs).u64(*node_count).u8(*majority);
            }
            LedgerRecord::Halt { tick } => {
                enc.u8(7).u64(*tick);
            }
            LedgerRecord::Remuneration { node_id, tx_count } => {
                enc.u8(8).str(node_id).u64(*tx_count);
            }
        }
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => LedgerRecord::PolicyDigest { scope: dec.string()?, policy_id: dec.string()?, digest: dec.decode()? },
            1 => LedgerRecord::PolicyConflict { domain_id: dec.string()?, rule_id: dec.string()? },
            2 => LedgerRecord::AuditDigest {
                domain_id: dec.string()?,
                first_entry: dec.u64()?,
                entry_count: dec.u64()?,
                digest: dec.decode()?,
            },
            3 => LedgerRecord::Endorsement(dec.decode()?),
            4 => LedgerRecord::Transaction(dec.decode()?),
            5 => {
                let node_id = dec.string()?;
                let verdict = match dec.u8()? {
                    0 => Verdict::Compliant,
                    1 => Verdict::NonCompliant,
                    2 => Verdict::Unknown,
                    tag => return Err(DecodeError::BadTag { what: "verdict", tag }),
                };
                LedgerRecord::ResultDigest { node_id, verdict, digest: dec.decode()? }
            }
            6 => LedgerRecord::Governance {
                epoch: dec.u64()?,
                distinct_configs: dec.u64()?,
                node_count: dec.u64()?,
                majority: dec.u8()?,
            },
            7 => LedgerRecord::Halt { tick: dec.u64()? },
            8 => LedgerRecord::Remuneration { node_id: dec.string()?, tx_count: dec.u64()? },
            tag => return Err(DecodeError::BadTag { what: "ledger record", tag }),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerBlock {
    pub height: u64,
    pub prev_digest: Digest,
    pub records: Vec<LedgerRecord>,
    pub forger: String,
    pub tick: Tick,
    pub block_digest: Digest,
}

impl LedgerBlock {
    pub fn new(height: u64, prev_digest: Digest, records: Vec<LedgerRecord>, forger: impl Into<String>, tick: Tick) -> Self {
        let mut block = LedgerBlock { height, prev_digest, records, forger: forger.into(), tick, block_digest: Digest::ZERO };
        block.block_digest = block.compute_digest();
        block
    }

    pub fn content_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_tag(TAG_BLOCK);
        enc.u64(self.height)
            .encode(&self.prev_digest)
            .list(&self.records, |e, r| {
                e.encode(r);
            })
            .str(&self.forger)
            .u64(self.tick);
        enc.finish()
    }

    pub fn compute_digest(&self) -> Digest {
        digest(&self.content_bytes())
    }
}

impl Canonical for LedgerBlock {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.fixed(&self.content_bytes()).encode(&self.block_digest);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.expect_tag("block", TAG_BLOCK)?;
        Ok(LedgerBlock {
            height: dec.u64()?,
            prev_digest: dec.decode()?,
            records: dec.list(|d| d.decode())?,
            forger: dec.string()?,
            tick: dec.u64()?,
            block_digest: dec.decode()?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ledger {
    blocks: Vec<LedgerBlock>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn blocks(&self) -> &[LedgerBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> Option<&LedgerBlock> {
        self.blocks.last()
    }

    /// All-zero before genesis.
    pub fn tip_digest(&self) -> Digest {
        self.tip().map_or(Digest::ZERO, |b| b.block_digest)
    }

    pub fn next_block(&self, records: Vec<LedgerRecord>, forger: impl Into<String>, tick: Tick) -> LedgerBlock {
        LedgerBlock::new(self.blocks.len() as u64, self.tip_digest(), records, forger, tick)
    }

    pub fn append(&mut self, records: Vec<LedgerRecord>, forger: impl Into<String>, tick: Tick) -> &LedgerBlock {
        let block = self.next_block(records, forger, tick);
        self.blocks.push(block);
        self.blocks.last().expect("just pushed")
    }

    /// Appends a block built elsewhere; it must extend the tip.
    pub fn push(&mut self, block: LedgerBlock) -> Result<(), IntegrityError> {
        let position = self.blocks.len();
        if block.height != position as u64 {
            return Err(IntegrityError::Height { position, height: block.height });
        }
        if block.prev_digest != self.tip_digest() {
            return Err(IntegrityError::Link { height: block.height });
        }
        if block.block_digest != block.compute_digest() {
            return Err(IntegrityError::Digest { height: block.height });
        }
        self.blocks.push(block);
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = &LedgerRecord> {
        self.blocks.iter().flat_map(|b| b.records.iter())
    }

    pub fn verify(&self) -> Result<(), IntegrityError> {
        let mut prev = Digest::ZERO;
        for (position, block) in self.blocks.iter().enumerate() {
            if block.height != position as u64 {
                return Err(IntegrityError::Height { position, height: block.height });
            }
            if block.prev_digest != prev {
                return Err(IntegrityError::Link { height: block.height });
            }
            if block.block_digest != block.compute_digest() {
                return Err(IntegrityError::Digest { height: block.height });
            }
            prev = block.block_digest;
        }
        Ok(())
    }

    pub fn export_canonical(&self) -> String {
        let mut out = String::new();
        for block in &self.blocks {
            out.push_str(&hex::encode(block.to_canonical_bytes()));
            out.push('\n');
        }
        out
    }

    /// Parses an export without checking links; call [`Ledger::verify`] for that.
    pub fn import_canonical(text: &str) -> Result<Self, IntegrityError> {
        let mut blocks = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line_no = i + 1;
            let bytes = hex::decode(line.trim()).map_err(|e| IntegrityError::Decode {
                line: line_no,
                source: DecodeError::Invalid(format!("hex: {e}")),
            })?;
            let block = LedgerBlock::from_canonical_bytes(&bytes)
                .map_err(|source| IntegrityError::Decode { line: line_no, source })?;
            blocks.push(block);
        }
        Ok(Ledger { blocks })
    }

    pub fn render_block(block: &LedgerBlock) -> String {
        let mut out = format!(
            "block {} tick={} forger={} digest={} prev={}\n",
            block.height, block.tick, block.forger, block.block_digest, block.prev_digest
        );
        for r in &block.records {
            let _ = writeln!(out, "  {}", r.describe());
        }
        out
    }

    pub fn render_text(&self) -> String {
        self.blocks.iter().map(Self::render_block).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Ledger {
        let mut l = Ledger::new();
        l.append(vec![LedgerRecord::Halt { tick: 1 }], "genesis", 0);
        l.append(
            vec![LedgerRecord::PolicyDigest { scope: "consortium".into(), policy_id: "p".into(), digest: digest(b"p") }],
            "n1",
            1,
        );
        l.append(vec![], "n2", 2);
        l
    }

    #[test]
    fn genesis_convention() {
        let l = sample();
        let g = &l.blocks()[0];
        assert_eq!(g.height, 0);
        assert_eq!(g.prev_digest, Digest::ZERO);
        assert_eq!(g.block_digest, g.compute_digest());
        assert!(l.verify().is_ok());
    }

    #[test]
    fn export_round_trip() {
        let l = sample();
        let back = Ledger::import_canonical(&l.export_canonical()).unwrap();
        assert_eq!(back, l);
        assert_eq!(back.tip_digest(), l.tip_digest());
    }

    #[test]
    fn tamper_is_detected() {
        let mut l = sample();
        l.blocks[1].forger = "mallory".into();
        assert_eq!(l.verify(), Err(IntegrityError::Digest { height: 1 }));
        let mut l = sample();
        let fixed = LedgerBlock::new(1, Digest::ZERO, vec![], "x", 1);
        l.blocks[1] = fixed;
        assert_eq!(l.verify(), Err(IntegrityError::Link { height: 1 }));
    }

    #[test]
    fn push_rejects_non_extending_block() {
        let mut l = sample();
        let stale = l.blocks()[1].clone();
        assert!(l.push(stale).is_err());
        let next = l.next_block(vec![], "n3", 3);
        assert!(l.push(next).is_ok());
    }

    #[test]
    fn transaction_signature() {
        let k = SigningKey::from_seed([2; 32]);
        let tx = Transaction::new(&k, b"pay".to_vec());
        assert!(tx.verify());
        assert_eq!(Transaction::from_canonical_bytes(&tx.to_canonical_bytes()).unwrap(), tx);
    }
}
