//! Binary Merkle tree with domain-separated hashing.
//!
//! leaf node = H(0x00 || leaf), internal node = H(0x01 || left || right).
//! An unpaired last node at any level moves up unchanged.

use thiserror::Error;

use crate::model::crypto::digest_parts;
use crate::model::Digest;

const LEAF_PREFIX: u8 = 0x00;
const NODE_PREFIX: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MerkleError {
    #[error("merkle tree needs at least one leaf")]
    Empty,
    #[error("leaf index {index} out of range for {count} leaves")]
    IndexOutOfRange { index: usize, count: usize },
}

fn leaf_hash(leaf: &Digest) -> Digest {
    digest_parts(&[&[LEAF_PREFIX], leaf.as_bytes()])
}

fn node_hash(left: &Digest, right: &Digest) -> Digest {
    digest_parts(&[&[NODE_PREFIX], left.as_bytes(), right.as_bytes()])
}

fn next_level(level: &[Digest]) -> Vec<Digest> {
    level
        .chunks(2)
        .map(|pair| match pair {
            [l, r] => node_hash(l, r),
            [only] => *only,
            _ => unreachable!("chunks(2)"),
        })
        .collect()
}

pub fn merkle_root(leaves: &[Digest]) -> Result<Digest, MerkleError> {
    if leaves.is_empty() {
        return Err(MerkleError::Empty);
    }
    let mut level: Vec<Digest> = leaves.iter().map(leaf_hash).collect();
    while level.len() > 1 {
        level = next_level(&level);
    }
    Ok(level[0])
}

/// Sibling hashes from the leaf upward; promoted levels contribute nothing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleProof {
    pub leaf_count: usize,
    pub siblings: Vec<Digest>,
}

pub fn merkle_prove(leaves: &[Digest], index: usize) -> Result<MerkleProof, MerkleError> {
    if index >= leaves.len() {
        return Err(MerkleError::IndexOutOfRange { index, count: leaves.len() });
    }
    let mut level: Vec<Digest> = leaves.iter().map(leaf_hash).collect();
    let mut pos = index;
    let mut siblings = Vec::new();
    while level.len() > 1 {
        if let Some(sib) = level.get(pos ^ 1) {
            siblings.push(*sib);
        }
        level = next_level(&level);
        pos /= 2;
    }
    Ok(MerkleProof { leaf_count: leaves.len(), siblings })
}

pub fn merkle_verify(root: &Digest, leaf: &Digest, index: usize, proof: &MerkleProof) -> bool {
    if index >= proof.leaf_count {
        return false;
    }
    let mut acc = leaf_hash(leaf);
    let mut pos = index;
    let mut width = proof.leaf_count;
    let mut siblings = proof.siblings.iter();
    while width > 1 {
        let promoted = pos == width - 1 && width % 2 == 1;
        if !promoted {
            let Some(sib) = siblings.next() else {
                return false;
            };
            acc = if pos.is_multiple_of(2) { node_hash(&acc, sib) } else { node_hash(sib, &acc) };
        }
        pos /= 2;
        width = width.div_ceil(2);
    }
    siblings.next().is_none() && acc == *root
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::digest;

    fn leaves(n: usize) -> Vec<Digest> {
        (0..n).map(|i| digest(format!("leaf-{i}").as_bytes())).collect()
    }

    #[test]
    fn single_leaf_root() {
        let l = leaves(1);
        assert_eq!(merkle_root(&l).unwrap(), digest_parts(&[&[0u8], l[0].as_bytes()]));
    }

    #[test]
    fn empty_rejected() {
        assert_eq!(merkle_root(&[]), Err(MerkleError::Empty));
        assert_eq!(merkle_prove(&leaves(2), 2), Err(MerkleError::IndexOutOfRange { index: 2, count: 2 }));
    }

    #[test]
    fn proofs_verify_and_bind_index() {
        for n in 1..=9 {
            let l = leaves(n);
            let root = merkle_root(&l).unwrap();
            for i in 0..n {
                let p = merkle_prove(&l, i).unwrap();
                assert!(merkle_verify(&root, &l[i], i, &p));
                for j in (0..n).filter(|&j| j != i) {
                    assert!(!merkle_verify(&root, &l[j], i, &p));
                    assert!(!merkle_verify(&root, &l[i], j, &p));
                }
                assert!(!merkle_verify(&root, &l[i], n, &p));
            }
        }
    }

    #[test]
    fn proof_with_extra_sibling_fails() {
        let l = leaves(4);
        let root = merkle_root(&l).unwrap();
        let mut p = merkle_prove(&l, 0).unwrap();
        p.siblings.push(l[0]);
        assert!(!merkle_verify(&root, &l[0], 0, &p));
    }
}
