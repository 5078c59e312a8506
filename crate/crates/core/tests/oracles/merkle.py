#!/usr/bin/env python3
"""Brute-force Merkle root and inclusion-proof vectors for trees of 1..8 leaves.

leaf node = H(0x00 || leaf); internal node = H(0x01 || left || right);
an unpaired last node at a level is promoted unchanged.
A proof is the bottom-up list of sibling hashes, skipping promoted levels.
"""
import hashlib
import json


def h(b):
    return hashlib.sha256(b).digest()


def levels(leaves):
    level = [h(b"\x00" + l) for l in leaves]
    out = [level]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), 2):
            if i + 1 < len(level):
                nxt.append(h(b"\x01" + level[i] + level[i + 1]))
            else:
                nxt.append(level[i])
        level = nxt
        out.append(level)
    return out


def proof(leaves, index):
    path = []
    pos = index
    for level in levels(leaves)[:-1]:
        sib = pos ^ 1
        if sib < len(level):
            path.append(level[sib].hex())
        pos //= 2
    return path


def main():
    trees = []
    for n in range(1, 9):
        leaves = [h(b"leaf-%d" % i) for i in range(n)]
        trees.append({
            "leaf_count": n,
            "leaves": [l.hex() for l in leaves],
            "root": levels(leaves)[-1][0].hex(),
            "proofs": [proof(leaves, i) for i in range(n)],
        })
    print(json.dumps({"trees": trees}, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
