#!/usr/bin/env python3
"""Independent reference values for the test corpus.

Everything here is computed with Python's hashlib/json/base64 and a
big-integer Poseidon, without touching the Rust code. The printed values
are pinned in the Rust unit tests.
"""
import base64
import hashlib
import json
import os
import sys

sys.path.insert(0, os.path.dirname(__file__))
import gen_poseidon_params as gp  # noqa: E402

P = gp.P
CONSTANTS, MDS = gp.generate()


def poseidon2(x, y):
    return gp.hash2(x, y, CONSTANTS, MDS)


def cid_of(data: bytes) -> str:
    # CIDv1, raw codec (0x55), sha2-256 multihash (0x12, 32 bytes), multibase base32 lower ('b').
    raw = bytes([0x01, 0x55, 0x12, 0x20]) + hashlib.sha256(data).digest()
    return "b" + base64.b32encode(raw).decode().lower().rstrip("=")


def canonical(tx) -> bytes:
    ordered = {
        "assetId": tx["assetId"],
        "participant": tx["participant"],
        "assetCid": tx["assetCid"],
        "clientTimestamp": tx["clientTimestamp"],
    }
    return json.dumps(ordered, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def leaf(tx) -> int:
    return int.from_bytes(hashlib.sha256(canonical(tx)).digest(), "big") % P


def merkle_root(leaves):
    assert len(leaves) == 32
    level1 = [poseidon2(leaves[2 * i], leaves[2 * i + 1]) for i in range(16)]
    level2 = [poseidon2(level1[2 * i], level1[2 * i + 1]) for i in range(8)]
    level3 = [poseidon2(level2[2 * i], level2[2 * i + 1]) for i in range(4)]
    level4 = [poseidon2(level3[2 * i], level3[2 * i + 1]) for i in range(2)]
    return poseidon2(level4[0], level4[1])


def h(v):
    return "0x%064x" % v


def main():
    print("cid(empty)            =", cid_of(b""))
    print("cid('hello asset')    =", cid_of(b"hello asset"))
    sample = {
        "assetId": "asset-0001",
        "participant": "org1-user7",
        "assetCid": cid_of(b"hello asset"),
        "clientTimestamp": 1735689600000,
    }
    print("sample canonical      =", canonical(sample).decode())
    print("sample leaf           =", h(leaf(sample)))
    dummy = {
        "assetId": "DUMMY",
        "participant": "DUMMY",
        "assetCid": cid_of(b""),
        "clientTimestamp": 0,
    }
    print("dummy canonical       =", canonical(dummy).decode())
    dummy_leaf = leaf(dummy)
    print("dummy leaf            =", h(dummy_leaf))
    print("root(1..=32)          =", h(merkle_root(list(range(1, 33)))))
    print("root(all dummy)       =", h(merkle_root([dummy_leaf] * 32)))
    padded = [leaf(sample)] + [dummy_leaf] * 31
    print("root(sample + 31 dummy) =", h(merkle_root(padded)))
    print("level1[0] of 1..=32   =", h(poseidon2(1, 2)))


if __name__ == "__main__":
    main()
