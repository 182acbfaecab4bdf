#!/usr/bin/env python3
"""Standalone reference encoder for the canonical ledger format.

Builds the default test genesis block and one signed transaction field by
field, then writes their bytes and SHA-256 digests to vectors.json. Shares no
code with the Rust implementation.
"""
import hashlib
import json
import os
import struct

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives import serialization


def u8(v):
    return struct.pack(">B", v)


def u32(v):
    return struct.pack(">I", v)


def u64(v):
    return struct.pack(">Q", v)


def string(s):
    b = s.encode("utf-8")
    return u32(len(b)) + b


def keypair(seed_byte):
    sk = Ed25519PrivateKey.from_private_bytes(bytes([seed_byte]) * 32)
    pk = sk.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    return sk, pk


def rnode(pk, host, port, raftport):
    return "rnode://%s@%s:%d?raftport=%d" % (pk.hex(), host, port, raftport)


def genesis_vectors():
    _, admin = keypair(0x01)
    members = []
    for i, seed in enumerate((0x11, 0x12, 0x13)):
        _, pk = keypair(seed)
        members.append(rnode(pk, "127.0.0.1", 8101 + i, 9101 + i))

    height, term, timestamp = 0, 0, 0
    prev_hash = bytes(32)
    proposer = bytes(32)
    kind = u8(0x01) + admin + u32(len(members)) + b"".join(string(m) for m in members)
    prefix = u64(height) + prev_hash + u64(timestamp) + proposer + u64(term) + kind
    header = prefix + u32(0)  # no transaction ids
    block_hash = hashlib.sha256(header).digest()
    canonical = prefix + u32(0) + block_hash
    return {
        "admin_pubkey": admin.hex(),
        "members": members,
        "block_hash": block_hash.hex(),
        "canonical_hex": canonical.hex(),
        "canonical_sha256": hashlib.sha256(canonical).hexdigest(),
    }


def transaction_vectors():
    sk, sender = keypair(0x03)
    personal_ref = hashlib.sha256(b"golden-personal-secret").digest()
    payload = (
        u8(0x02) + string("blanket") + u64(100) + string("pcs") + personal_ref
    )
    body = sender + u64(0) + payload
    tx_id = hashlib.sha256(body).digest()
    sig = sk.sign(body)
    canonical = tx_id + body + sig
    return {
        "sender": sender.hex(),
        "personal_ref": personal_ref.hex(),
        "tx_id": tx_id.hex(),
        "signature": sig.hex(),
        "canonical_hex": canonical.hex(),
    }


def main():
    out = {"genesis": genesis_vectors(), "create_need_tx": transaction_vectors()}
    path = os.path.join(os.path.dirname(os.path.abspath(__file__)), "vectors.json")
    with open(path, "w") as f:
        json.dump(out, f, indent=2, sort_keys=True)
        f.write("\n")
    print(path)


if __name__ == "__main__":
    main()
