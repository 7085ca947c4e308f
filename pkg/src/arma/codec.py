"""Length-prefixed binary frames.

Frame layout: 4-byte big-endian payload length, 1-byte type tag, payload.
All integers are big-endian and fixed width; term/seq/epoch/number are u64,
shard and party indices u32, byte strings carry a u32 length prefix.
"""
from __future__ import annotations

import struct
from enum import IntEnum

from .model import (Batch, BatchAttestationShare, BatchId, BatchPullRequest, Block, BlockHeader,
                    ComplaintVote, HeaderPullRequest, HeaderSignature, OrphanPtr, Transaction)

DEFAULT_MAX_FRAME = 64 << 20
FRAME_HEADER = struct.Struct(">IB")


class FrameError(ValueError):
    """Decoding failure; ``reason`` is one of incomplete, unknown type, oversized, malformed."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class Tag(IntEnum):
    TRANSACTION = 1
    BATCH = 2
    SHARE = 3
    COMPLAINT = 4
    HEADER = 5
    BATCH_PULL = 6
    HEADER_PULL = 7
    BLOCK = 8
    HEADER_SIG = 9


class Ack(IntEnum):
    ACK = 0x00
    NACK_INVALID = 0x01
    NACK_UNAVAILABLE = 0x02


_U32 = struct.Struct(">I")
_U16 = struct.Struct(">H")
_BID = struct.Struct(">IIQQ")
_SHARE = struct.Struct(">32sIQ")
_COMPLAINT = struct.Struct(">IQI")
_HDR = struct.Struct(">Q32s")
_BPULL = struct.Struct(">IQQ")
_HPULL = struct.Struct(">QB")
_HSIG = struct.Struct(">QI")


class _Reader:
    __slots__ = ("buf", "pos")

    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise FrameError("malformed", "payload shorter than its fields")
        out = bytes(self.buf[self.pos:end])
        self.pos = end
        return out

    def unpack(self, st: struct.Struct):
        end = self.pos + st.size
        if end > len(self.buf):
            raise FrameError("malformed", "payload shorter than its fields")
        out = st.unpack_from(self.buf, self.pos)
        self.pos = end
        return out

    def blob(self) -> bytes:
        (n,) = self.unpack(_U32)
        return self.take(n)

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise FrameError("malformed", "trailing bytes in payload")


def _blob(b: bytes) -> bytes:
    return _U32.pack(len(b)) + b


def _bid(b: BatchId) -> bytes:
    return _BID.pack(b.shard, b.primary, b.term, b.seq)


def _read_bid(r: _Reader) -> BatchId:
    return BatchId(*r.unpack(_BID))


def _tx_body(tx: Transaction) -> bytes:
    return _blob(tx.payload) + _blob(tx.client_sig)


def _read_tx(r: _Reader) -> Transaction:
    payload = r.blob()
    return Transaction(payload, r.blob())


def _batch_body(b: Batch) -> bytes:
    parts = [_bid(b.id), b.digest, _U32.pack(len(b.txs))]
    parts.extend(_tx_body(t) for t in b.txs)
    return b"".join(parts)


def _read_batch(r: _Reader) -> Batch:
    bid = _read_bid(r)
    digest = r.take(32)
    (n,) = r.unpack(_U32)
    return Batch(bid, tuple(_read_tx(r) for _ in range(n)), digest)


def _share_body(s: BatchAttestationShare) -> bytes:
    parts = [_bid(s.batch_id), _SHARE.pack(s.digest, s.signer, s.epoch),
             _U16.pack(len(s.orphan_ptrs))]
    for p in s.orphan_ptrs:
        parts.append(_bid(p.batch_id) + p.digest + _U32.pack(p.signer))
    parts.append(_blob(s.sig))
    return b"".join(parts)


def _read_share(r: _Reader) -> BatchAttestationShare:
    bid = _read_bid(r)
    digest, signer, epoch = r.unpack(_SHARE)
    (n,) = r.unpack(_U16)
    ptrs = []
    for _ in range(n):
        pbid = _read_bid(r)
        pdig = r.take(32)
        (psig,) = r.unpack(_U32)
        ptrs.append(OrphanPtr(pbid, pdig, psig))
    return BatchAttestationShare(bid, digest, signer, epoch, tuple(ptrs), r.blob())


def _header_body(h: BlockHeader) -> bytes:
    parts = [_HDR.pack(h.number, h.prev_hash), _bid(h.batch_id), h.digest, _U16.pack(len(h.sigs))]
    for party, sig in h.sigs:
        parts.append(_U32.pack(party) + _blob(sig))
    return b"".join(parts)


def _read_header(r: _Reader) -> BlockHeader:
    number, prev = r.unpack(_HDR)
    bid = _read_bid(r)
    digest = r.take(32)
    (n,) = r.unpack(_U16)
    sigs = []
    for _ in range(n):
        (party,) = r.unpack(_U32)
        sigs.append((party, r.blob()))
    return BlockHeader(number, prev, bid, digest, tuple(sigs))


def encode_payload(msg) -> tuple[Tag, bytes]:
    if isinstance(msg, Transaction):
        return Tag.TRANSACTION, _tx_body(msg)
    if isinstance(msg, Batch):
        return Tag.BATCH, _batch_body(msg)
    if isinstance(msg, BatchAttestationShare):
        return Tag.SHARE, _share_body(msg)
    if isinstance(msg, ComplaintVote):
        ev = msg.evidence_tx_id
        body = _COMPLAINT.pack(msg.shard, msg.term, msg.signer)
        body += (b"\x01" + ev) if ev is not None else b"\x00"
        return Tag.COMPLAINT, body + _blob(msg.sig)
    if isinstance(msg, BlockHeader):
        return Tag.HEADER, _header_body(msg)
    if isinstance(msg, BatchPullRequest):
        body = _BPULL.pack(msg.shard, msg.term, msg.seq)
        body += (b"\x01" + msg.digest) if msg.digest is not None else b"\x00"
        return Tag.BATCH_PULL, body
    if isinstance(msg, HeaderPullRequest):
        return Tag.HEADER_PULL, _HPULL.pack(msg.from_number, int(msg.subscribe))
    if isinstance(msg, Block):
        return Tag.BLOCK, _blob(_header_body(msg.header)) + _batch_body(msg.batch)
    if isinstance(msg, HeaderSignature):
        return Tag.HEADER_SIG, _HSIG.pack(msg.number, msg.party) + _blob(msg.sig)
    raise TypeError(f"not a wire type: {type(msg).__name__}")


def _optional_digest(r: _Reader) -> bytes | None:
    flag = r.take(1)
    if flag == b"\x00":
        return None
    if flag == b"\x01":
        return r.take(32)
    raise FrameError("malformed", "bad optional-digest flag")


def decode_payload(tag: int, payload) -> object:
    r = _Reader(payload)
    if tag == Tag.TRANSACTION:
        msg = _read_tx(r)
    elif tag == Tag.BATCH:
        msg = _read_batch(r)
    elif tag == Tag.SHARE:
        msg = _read_share(r)
    elif tag == Tag.COMPLAINT:
        shard, term, signer = r.unpack(_COMPLAINT)
        ev = _optional_digest(r)
        msg = ComplaintVote(shard, term, signer, ev, r.blob())
    elif tag == Tag.HEADER:
        msg = _read_header(r)
    elif tag == Tag.BATCH_PULL:
        shard, term, seq = r.unpack(_BPULL)
        msg = BatchPullRequest(shard, term, seq, _optional_digest(r))
    elif tag == Tag.HEADER_PULL:
        number, sub = r.unpack(_HPULL)
        msg = HeaderPullRequest(number, bool(sub))
    elif tag == Tag.BLOCK:
        header = _read_header(_Reader(r.blob()))
        msg = Block(header, _read_batch(r))
    elif tag == Tag.HEADER_SIG:
        number, party = r.unpack(_HSIG)
        msg = HeaderSignature(number, party, r.blob())
    else:
        raise FrameError("unknown type", f"tag {tag}")
    r.done()
    return msg


def pack_frame(tag: int, payload: bytes) -> bytes:
    return FRAME_HEADER.pack(len(payload), tag) + payload


def encode_frame(msg) -> bytes:
    tag, payload = encode_payload(msg)
    return pack_frame(tag, payload)


def read_frame(buf, offset: int = 0, max_len: int = DEFAULT_MAX_FRAME) -> tuple[int, memoryview, int]:
    """Return (tag, payload view, next offset) for the frame at ``offset``."""
    view = memoryview(buf)
    if len(view) - offset < FRAME_HEADER.size:
        raise FrameError("incomplete", "short frame header")
    length, tag = FRAME_HEADER.unpack_from(view, offset)
    if length > max_len:
        raise FrameError("oversized", f"declared {length} > limit {max_len}")
    if tag not in Tag._value2member_map_:
        raise FrameError("unknown type", f"tag {tag}")
    start = offset + FRAME_HEADER.size
    if len(view) - start < length:
        raise FrameError("incomplete", f"need {length} payload bytes, have {len(view) - start}")
    return tag, view[start:start + length], start + length


def decode_frame(buf, max_len: int = DEFAULT_MAX_FRAME):
    tag, payload, end = read_frame(buf, 0, max_len)
    if end != len(buf):
        raise FrameError("malformed", "trailing bytes after frame")
    return decode_payload(tag, payload)


def iter_frames(buf, max_len: int = DEFAULT_MAX_FRAME):
    """Decode back-to-back frames; raises FrameError('incomplete') on a partial tail."""
    offset = 0
    while offset < len(buf):
        tag, payload, offset = read_frame(buf, offset, max_len)
        yield decode_payload(tag, payload)
