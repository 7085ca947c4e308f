import hashlib
import random

import pytest

from arma.crypto import KeyRing, SigningKey, deterministic_keys, derive_secret, verify
from arma.model import (Batch, BatchAttestationShare, BatchId, BlockHeader, OrphanPtr, Transaction,
                        compute_tx_id, map_to_shard, merkle_root, sha256)


def crc32_bitwise(data: bytes) -> int:
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ (0xEDB88320 if crc & 1 else 0)
    return crc ^ 0xFFFFFFFF


def merkle_reference(leaves):
    def node(level):
        if len(level) == 1:
            return level[0]
        if len(level) % 2:
            level = level + [level[-1]]
        return node([hashlib.sha256(level[i] + level[i + 1]).digest()
                     for i in range(0, len(level), 2)])
    return node([hashlib.sha256(x).digest() for x in leaves])


def test_sha256_vectors():
    assert sha256(b"abc").hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert compute_tx_id(b"").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert Transaction(b"abc").tx_id == sha256(b"abc")


def test_crc32_check_value_and_shard_mapping():
    assert crc32_bitwise(b"123456789") == 0xCBF43926
    rng = random.Random("shard")
    for _ in range(300):
        tx_id = rng.randbytes(32)
        for k in (1, 2, 3, 4, 7):
            assert map_to_shard(tx_id, k) == crc32_bitwise(tx_id) % k


def test_shard_mapping_spreads():
    rng = random.Random(5)
    counts = [0] * 4
    for _ in range(4000):
        counts[map_to_shard(rng.randbytes(32), 4)] += 1
    assert min(counts) > 850


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 7, 8, 9, 16, 33])
def test_merkle_root_matches_reference(n):
    rng = random.Random(n)
    leaves = [rng.randbytes(32) for _ in range(n)]
    assert merkle_root(leaves) == merkle_reference(leaves)


def test_merkle_root_order_sensitive_and_empty():
    a, b = b"a" * 32, b"b" * 32
    assert merkle_root([a, b]) != merkle_root([b, a])
    with pytest.raises(ValueError):
        merkle_root([])


def test_batch_well_formedness():
    txs = [Transaction(bytes([i]) * 10) for i in range(5)]
    b = Batch.build(BatchId(0, 0, 0, 0), txs)
    assert b.is_well_formed()
    assert not Batch(b.id, b.txs, bytes(32)).is_well_formed()
    assert not Batch(b.id, (), b.digest).is_well_formed()
    moved = b.with_id(BatchId(0, 1, 1, 0))
    assert moved.digest == b.digest and moved.is_well_formed()


def test_batch_id_order():
    ids = [BatchId(0, 1, 1, 0), BatchId(0, 0, 0, 2), BatchId(0, 0, 0, 1)]
    assert sorted(ids) == [BatchId(0, 0, 0, 1), BatchId(0, 0, 0, 2), BatchId(0, 1, 1, 0)]


def test_share_signing_bytes_cover_every_field():
    base = BatchAttestationShare(BatchId(1, 1, 2, 3), b"d" * 32, 2, 5,
                                 (OrphanPtr(BatchId(1, 1, 2, 1), b"e" * 32, 0),))
    variants = [
        BatchAttestationShare(BatchId(1, 1, 3, 3), base.digest, 2, 5, base.orphan_ptrs),
        BatchAttestationShare(base.batch_id, b"x" * 32, 2, 5, base.orphan_ptrs),
        BatchAttestationShare(base.batch_id, base.digest, 3, 5, base.orphan_ptrs),
        BatchAttestationShare(base.batch_id, base.digest, 2, 6, base.orphan_ptrs),
        BatchAttestationShare(base.batch_id, base.digest, 2, 5, ()),
    ]
    for v in variants:
        assert v.signing_bytes() != base.signing_bytes()
    assert base.pointers_well_formed()
    later = BatchAttestationShare(base.batch_id, base.digest, 2, 5,
                                  (OrphanPtr(BatchId(1, 1, 2, 4), b"e" * 32, 0),))
    assert not later.pointers_well_formed()
    other_shard = BatchAttestationShare(base.batch_id, base.digest, 2, 5,
                                        (OrphanPtr(BatchId(0, 0, 0, 0), b"e" * 32, 0),))
    assert not other_shard.pointers_well_formed()


def test_header_hash_ignores_signatures():
    h = BlockHeader(3, b"p" * 32, BatchId(0, 0, 0, 1), b"d" * 32)
    signed = h.with_sigs([(2, b"s2"), (0, b"s0")])
    assert signed.sigs == ((0, b"s0"), (2, b"s2"))
    assert signed.hash() == h.hash()
    assert signed.unsigned() == h


@pytest.mark.parametrize("scheme", ["ed25519", "hmac"])
def test_signatures(scheme):
    keys, client, ring = deterministic_keys(9, 4, scheme)
    msg = b"hello"
    sig = keys[2].sign(msg)
    assert ring.verify_party(2, msg, sig)
    assert not ring.verify_party(1, msg, sig)
    assert not ring.verify_party(2, msg + b"!", sig)
    assert not ring.verify_party(7, msg, sig)
    assert not verify(scheme, ring.parties[2], msg, b"short")
    assert ring.verify_client(msg, client.sign(msg))
    assert KeyRing.from_json(ring.to_json(1)) == ring


def test_keys_deterministic():
    assert derive_secret(1, 0) == derive_secret(1, 0) != derive_secret(2, 0)
    a = deterministic_keys(3, 4, "ed25519")[2]
    b = deterministic_keys(3, 4, "ed25519")[2]
    assert a == b
    with pytest.raises(ValueError):
        SigningKey("rsa", b"x")
