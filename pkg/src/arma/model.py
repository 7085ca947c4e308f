"""Domain values shared by every node role.

All values are immutable after construction. Digests are raw 32-byte
``bytes``; use :func:`hexd` to render them.
"""
from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field
from functools import total_ordering

from .config import ConfigError

ZERO_HASH = bytes(32)
RECONFIG_MARKER = 0xC0

_sha256 = hashlib.sha256


def sha256(data: bytes) -> bytes:
    return _sha256(data).digest()


def hexd(digest: bytes) -> str:
    return digest.hex()


def compute_tx_id(payload: bytes) -> bytes:
    return _sha256(payload).digest()


def map_to_shard(tx_id: bytes, k: int) -> int:
    """CRC32 (IEEE) of the transaction id, reduced modulo the shard count."""
    if k < 1:
        raise ConfigError("shard count must be >= 1")
    return zlib.crc32(tx_id) % k


def merkle_root(tx_ids) -> bytes:
    """Binary Merkle root; leaves are hashed, odd levels duplicate their last node."""
    level = [_sha256(leaf).digest() for leaf in tx_ids]
    if not level:
        raise ValueError("merkle_root of an empty list")
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [_sha256(level[i] + level[i + 1]).digest() for i in range(0, len(level), 2)]
    return level[0]


@dataclass(frozen=True, slots=True)
class Transaction:
    payload: bytes
    client_sig: bytes = b""
    tx_id: bytes = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "tx_id", _sha256(self.payload).digest())

    @property
    def size(self) -> int:
        return len(self.payload)

    @property
    def is_reconfig(self) -> bool:
        return bool(self.payload) and self.payload[0] == RECONFIG_MARKER

    def __repr__(self) -> str:
        return f"Transaction({self.tx_id[:4].hex()}, {len(self.payload)}B)"


@total_ordering
@dataclass(frozen=True, slots=True)
class BatchId:
    shard: int
    primary: int
    term: int
    seq: int

    @property
    def order_key(self) -> tuple[int, int, int]:
        return (self.shard, self.term, self.seq)

    def __lt__(self, other: "BatchId") -> bool:
        if not isinstance(other, BatchId):
            return NotImplemented
        return self.order_key < other.order_key

    def __str__(self) -> str:
        return f"{self.shard}/{self.primary}/t{self.term}/s{self.seq}"


@dataclass(frozen=True, slots=True)
class Batch:
    id: BatchId
    txs: tuple[Transaction, ...]
    digest: bytes

    @classmethod
    def build(cls, batch_id: BatchId, txs) -> "Batch":
        txs = tuple(txs)
        return cls(batch_id, txs, merkle_root([t.tx_id for t in txs]))

    def is_well_formed(self) -> bool:
        return bool(self.txs) and merkle_root([t.tx_id for t in self.txs]) == self.digest

    def with_id(self, batch_id: BatchId) -> "Batch":
        return Batch(batch_id, self.txs, self.digest)

    @property
    def nbytes(self) -> int:
        return sum(len(t.payload) for t in self.txs)


@dataclass(frozen=True, slots=True)
class OrphanPtr:
    batch_id: BatchId
    digest: bytes
    signer: int

    @property
    def target(self) -> tuple:
        """Identity of the pending share this pointer votes against."""
        return (self.batch_id, self.digest, self.signer)


_SHARE_HEAD = struct.Struct(">IIQQ32sQI")
_PTR = struct.Struct(">IIQQ32sI")


@dataclass(frozen=True, slots=True)
class BatchAttestationShare:
    batch_id: BatchId
    digest: bytes
    signer: int
    epoch: int
    orphan_ptrs: tuple[OrphanPtr, ...] = ()
    sig: bytes = b""

    @property
    def key(self) -> tuple[int, int, int, bytes]:
        """Grouping key: (shard, term, seq, digest)."""
        b = self.batch_id
        return (b.shard, b.term, b.seq, self.digest)

    @property
    def ident(self) -> tuple:
        return (self.batch_id, self.digest, self.signer)

    def signing_bytes(self) -> bytes:
        b = self.batch_id
        parts = [b"BAS", _SHARE_HEAD.pack(b.shard, b.primary, b.term, b.seq, self.digest,
                                          self.epoch, self.signer),
                 struct.pack(">H", len(self.orphan_ptrs))]
        for p in self.orphan_ptrs:
            pb = p.batch_id
            parts.append(_PTR.pack(pb.shard, pb.primary, pb.term, pb.seq, p.digest, p.signer))
        return b"".join(parts)

    def pointers_well_formed(self) -> bool:
        own = self.batch_id
        return all(p.batch_id.shard == own.shard and
                   (p.batch_id.term, p.batch_id.seq) < (own.term, own.seq)
                   for p in self.orphan_ptrs)


@dataclass(frozen=True, slots=True)
class ComplaintVote:
    shard: int
    term: int
    signer: int
    evidence_tx_id: bytes | None = None
    sig: bytes = b""

    def signing_bytes(self) -> bytes:
        return b"CMP" + struct.pack(">QII", self.term, self.shard, self.signer)


_HEADER = struct.Struct(">Q32sIIQQ32s")


@dataclass(frozen=True, slots=True)
class BlockHeader:
    number: int
    prev_hash: bytes
    batch_id: BatchId
    digest: bytes
    sigs: tuple[tuple[int, bytes], ...] = ()

    def unsigned_bytes(self) -> bytes:
        b = self.batch_id
        return _HEADER.pack(self.number, self.prev_hash, b.shard, b.primary, b.term, b.seq,
                            self.digest)

    def hash(self) -> bytes:
        return sha256(self.unsigned_bytes())

    def signing_bytes(self) -> bytes:
        return b"HDR" + self.unsigned_bytes()

    def unsigned(self) -> "BlockHeader":
        return BlockHeader(self.number, self.prev_hash, self.batch_id, self.digest)

    def with_sigs(self, sigs) -> "BlockHeader":
        return BlockHeader(self.number, self.prev_hash, self.batch_id, self.digest,
                           tuple(sorted(sigs)))


@dataclass(frozen=True, slots=True)
class Block:
    header: BlockHeader
    batch: Batch


@dataclass(frozen=True, slots=True)
class BatchPullRequest:
    """Pull by position (term, seq) from a primary, or by digest from any holder."""
    shard: int
    term: int = 0
    seq: int = 0
    digest: bytes | None = None


@dataclass(frozen=True, slots=True)
class HeaderPullRequest:
    from_number: int
    subscribe: bool = True


@dataclass(frozen=True, slots=True)
class HeaderSignature:
    number: int
    party: int
    sig: bytes


def client_signing_bytes(payload: bytes) -> bytes:
    return b"TX" + payload
