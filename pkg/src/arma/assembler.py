"""Joins the finalized header stream with batches into committed blocks."""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

from .batcher import BatchPullResponse
from .codec import FrameError, decode_frame, encode_frame
from .config import Config
from .consenter import HeaderBundle, verify_header_quorum
from .crypto import KeyRing
from .model import (ZERO_HASH, Batch, BatchPullRequest, Block, BlockHeader,
                    HeaderPullRequest, merkle_root)
from .storage import OVERHEAD, CorruptRecord, RecordLog, scan_records
from .transport import Address, Transport, assembler_addr, batcher_addr, consenter_addr

log = logging.getLogger(__name__)


class BatchIndex:
    """digest -> batch, written through to a record log as soon as a batch arrives."""

    def __init__(self, log_: RecordLog | None = None):
        self.log = log_ if log_ is not None else RecordLog()
        self._by_digest: dict[bytes, Batch] = {}
        for _, rec in self.log.records():
            b = decode_frame(rec)
            self._by_digest.setdefault(b.digest, b)

    def ingest(self, batch: Batch) -> bool:
        if batch.digest in self._by_digest:
            return True
        if not batch.txs or merkle_root([t.tx_id for t in batch.txs]) != batch.digest:
            return False
        self.log.append(encode_frame(batch))
        self._by_digest[batch.digest] = batch
        return True

    def retrieve(self, digest: bytes) -> Batch | None:
        return self._by_digest.get(digest)

    def __contains__(self, digest: bytes) -> bool:
        return digest in self._by_digest

    def __len__(self) -> int:
        return len(self._by_digest)


class BlockLedger:
    def __init__(self, log_: RecordLog | None = None):
        self.log = log_ if log_ is not None else RecordLog()
        self.blocks: list[Block] = [decode_frame(rec) for _, rec in self.log.records()]

    @property
    def height(self) -> int:
        return len(self.blocks)

    def tip_hash(self) -> bytes:
        return self.blocks[-1].header.hash() if self.blocks else ZERO_HASH

    def append(self, block: Block) -> None:
        if block.header.number != self.height:
            raise ValueError(f"block {block.header.number} at height {self.height}")
        self.log.append(encode_frame(block))
        self.blocks.append(block)

    def getvalue(self) -> bytes:
        return self.log.getvalue()


@dataclass
class VerifyResult:
    ok: bool
    height: int
    offset: int | None = None       # byte offset of the first bad record
    index: int | None = None
    reason: str = ""
    truncated_at: int | None = None   # torn final record: reported, not a failure

    def to_dict(self) -> dict:
        return {"ok": self.ok, "height": self.height, "offset": self.offset,
                "index": self.index, "reason": self.reason, "truncated_at": self.truncated_at}


def verify_block(block: Block, number: int, prev: bytes, keys: KeyRing, quorum: int) -> str | None:
    h = block.header
    if h.number != number:
        return f"header number {h.number}, expected {number}"
    if h.prev_hash != prev:
        return "broken prev_hash linkage"
    if not verify_header_quorum(h, keys, quorum):
        return "header lacks a quorum of valid signatures"
    b = block.batch
    if not b.txs or merkle_root([t.tx_id for t in b.txs]) != h.digest or b.digest != h.digest:
        return "batch digest does not match header"
    if b.id != h.batch_id:
        return "batch id does not match header"
    return None


def _damaged_length(data: bytes, pos: int) -> bool:
    """True when the tail at ``pos`` is a complete record behind a corrupted
    length prefix rather than a partially written one: some length differing
    from the declared one in a single byte frames a CRC-valid record."""
    view = memoryview(data)
    n = len(view)
    if n - pos < OVERHEAD:
        return False
    declared = view[pos:pos + 4].tobytes()
    for i in range(4):
        for v in range(256):
            if v == declared[i]:
                continue
            cand = declared[:i] + bytes([v]) + declared[i + 1:]
            length = int.from_bytes(cand, "big")
            end = pos + OVERHEAD + length
            if end > n:
                continue
            body = view[pos + 4:pos + 4 + length]
            if zlib.crc32(body) == int.from_bytes(view[end - 4:end], "big"):
                return True
    return False


def verify_ledger(data: bytes, keys: KeyRing, quorum: int) -> VerifyResult:
    """Re-prove framing, CRCs, chain linkage, quorum signatures and digests."""
    try:
        scan = scan_records(data, strict=True)
    except CorruptRecord as exc:
        return VerifyResult(False, exc.index, exc.offset, exc.index, exc.why)
    prev = ZERO_HASH
    for i, (off, rec) in enumerate(scan.records):
        try:
            block = decode_frame(rec)
        except FrameError as exc:
            return VerifyResult(False, i, off, i, f"undecodable record: {exc.reason}")
        if not isinstance(block, Block):
            return VerifyResult(False, i, off, i, "record is not a block")
        why = verify_block(block, i, prev, keys, quorum)
        if why:
            return VerifyResult(False, i, off, i, why)
        prev = block.header.hash()
    n = len(scan.records)
    if scan.torn_tail and _damaged_length(data, scan.valid_end):
        return VerifyResult(False, n, scan.valid_end, n, "corrupt length prefix")
    return VerifyResult(True, n, truncated_at=scan.valid_end if scan.torn_tail else None)


@dataclass(frozen=True, slots=True)
class BlockPullRequest:
    from_height: int


@dataclass(frozen=True, slots=True)
class BlockBundle:
    blocks: tuple[Block, ...]


class AssemblerNode:
    def __init__(self, party: int, config: Config, keys: KeyRing, out: Transport,
                 ledger: BlockLedger | None = None, index: BatchIndex | None = None,
                 parked_log: RecordLog | None = None):
        self.party = party
        self.config = config
        self.keys = keys
        self.out = out
        self.addr = assembler_addr(party)
        self.ledger = ledger if ledger is not None else BlockLedger()
        self.index = index if index is not None else BatchIndex()
        self.parked_log = parked_log if parked_log is not None else RecordLog()
        self.headers: dict[int, BlockHeader] = {}     # verified, not yet committed
        self.requested: dict[bytes, tuple[int, int]] = {}   # digest -> (party cursor, sent at)
        self.suspects: set[Address] = set()
        self.sources = [consenter_addr((party + i) % config.n_parties)
                        for i in range(config.f + 1)]
        self.last_header_at = 0
        self.rejected_headers = 0
        self._peer_cursor = party
        for _, rec in self.parked_log.records():
            h = decode_frame(rec)
            if h.number >= self.ledger.height:
                self.headers.setdefault(h.number, h)

    @property
    def height(self) -> int:
        return self.ledger.height

    def subscribe(self, now: int) -> None:
        self.last_header_at = now
        for src in self.sources:
            self.out.send(self.addr, src, HeaderPullRequest(self.height + len(self._contiguous()), True))

    def _contiguous(self) -> list[BlockHeader]:
        out = []
        n = self.height
        while n in self.headers:
            out.append(self.headers[n])
            n += 1
        return out

    # -- ingest -----------------------------------------------------------------
    def ingest_batch(self, batch: Batch, src: Address | None = None, now: int = 0) -> bool:
        if not self.index.ingest(batch):
            if src is not None:
                self.suspects.add(src)
                log.warning("assembler %d: digest mismatch from %s", self.party, src)
            return False
        self.requested.pop(batch.digest, None)
        self._commit_ready()
        return True

    def on_header(self, header: BlockHeader, now: int = 0) -> str:
        """'committed', 'parked', 'buffered', 'stale' or 'rejected'."""
        n = header.number
        if n < self.height or n in self.headers:
            return "stale"
        if not verify_header_quorum(header, self.keys, self.config.quorum):
            self.rejected_headers += 1
            return "rejected"
        self.headers[n] = header
        self.last_header_at = now
        if header.digest not in self.index:
            self.parked_log.append(encode_frame(header))
        before = self.height
        self._commit_ready()
        if self.height > n:
            return "committed"
        if n == before:
            self._request(header.batch_id.shard, header.digest, now)
            return "parked"
        if header.digest not in self.index:
            self._request(header.batch_id.shard, header.digest, now)
        return "buffered"

    def _commit_ready(self) -> None:
        while True:
            n = self.ledger.height
            h = self.headers.get(n)
            if h is None:
                return
            b = self.index.retrieve(h.digest)
            if b is None:
                return
            if h.prev_hash != self.ledger.tip_hash():
                log.error("assembler %d: header %d does not chain", self.party, n)
                return
            if b.id != h.batch_id:
                b = b.with_id(h.batch_id)
            self.ledger.append(Block(h, b))
            del self.headers[n]

    # -- batch retrieval ----------------------------------------------------------
    def missing_batches(self) -> list[tuple[int, bytes]]:
        seen = {}
        for n in sorted(self.headers):
            h = self.headers[n]
            if h.digest not in self.index:
                seen.setdefault(h.digest, h.batch_id.shard)
        return [(s, d) for d, s in seen.items()]

    def _request(self, shard: int, digest: bytes, now: int, rotate: bool = False) -> None:
        cur, _ = self.requested.get(digest, (self.party - 1, 0))
        nparties = self.config.n_parties
        nxt = (cur + 1) % nparties if rotate or digest not in self.requested else cur
        for _ in range(nparties):
            if batcher_addr(nxt, shard) not in self.suspects:
                break
            nxt = (nxt + 1) % nparties
        self.requested[digest] = (nxt, now)
        self.out.send(self.addr, batcher_addr(nxt, shard), BatchPullRequest(shard, digest=digest))

    # -- catch-up -------------------------------------------------------------------
    def catch_up(self, blocks, source: Address | None = None) -> int:
        """Append verified blocks from a peer; stops at the first invalid one."""
        added = 0
        for block in blocks:
            n = self.height
            if block.header.number < n:
                continue
            why = verify_block(block, n, self.ledger.tip_hash(), self.keys, self.config.quorum)
            if why:
                if source is not None:
                    self.suspects.add(source)
                log.warning("assembler %d: peer block %d rejected: %s", self.party,
                            block.header.number, why)
                break
            self.index.ingest(block.batch)
            self.ledger.append(block)
            self.headers.pop(n, None)
            added += 1
        return added

    def request_catch_up(self) -> None:
        peers = [p for p in range(self.config.n_parties)
                 if p != self.party and assembler_addr(p) not in self.suspects]
        if not peers:
            return
        self._peer_cursor = (self._peer_cursor + 1) % len(peers)
        self.out.send(self.addr, assembler_addr(peers[self._peer_cursor]),
                      BlockPullRequest(self.height))

    # -- driver -------------------------------------------------------------------------
    def on_message(self, src: Address, msg, now: int) -> None:
        if isinstance(msg, HeaderBundle):
            for h in msg.headers:
                self.on_header(h, now)
        elif isinstance(msg, BlockHeader):
            self.on_header(msg, now)
        elif isinstance(msg, BatchPullResponse):
            for b in msg.batches:
                self.ingest_batch(b, src, now)
            if not msg.batches and msg.digest in self.requested:
                self._request(msg.shard, msg.digest, now, rotate=True)
        elif isinstance(msg, BlockPullRequest):
            blocks = tuple(self.ledger.blocks[msg.from_height:msg.from_height + 256])
            self.out.send(self.addr, src, BlockBundle(blocks))
        elif isinstance(msg, BlockBundle):
            self.catch_up(msg.blocks, src)

    def tick(self, now: int) -> None:
        cfg = self.config
        for digest, (cur, at) in list(self.requested.items()):
            if now - at >= cfg.pull_timeout:
                h_shard = next((h.batch_id.shard for h in self.headers.values()
                                if h.digest == digest), None)
                if h_shard is None:
                    del self.requested[digest]
                else:
                    self._request(h_shard, digest, now, rotate=True)
        for shard, digest in self.missing_batches():
            if digest not in self.requested:
                self._request(shard, digest, now)
        if now - self.last_header_at >= 20 * cfg.pull_timeout:
            self.subscribe(now)

    def idle(self) -> bool:
        return not self.headers
