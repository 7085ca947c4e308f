"""Single-byte mutations of a block ledger with the offset a verifier must report."""
from __future__ import annotations

import random

from arma.codec import decode_frame, encode_frame
from arma.model import Batch, Block, BlockHeader, Transaction
from arma.storage import frame_record, scan_records


def _with_record(data: bytes, records, i: int, payload: bytes) -> bytes:
    off = records[i][0]
    end = records[i + 1][0] if i + 1 < len(records) else len(data)
    return data[:off] + frame_record(payload) + data[end:]


def raw_flips(data: bytes, rng: random.Random, per_record: int = 2):
    """Flip one byte of the file. The CRC or framing catches these."""
    recs = scan_records(data).records
    for i, (off, rec) in enumerate(recs):
        end = off + 8 + len(rec)
        spots = [("length", off + rng.randrange(4)), ("crc", end - 1 - rng.randrange(4))]
        spots += [("body", off + 4 + rng.randrange(len(rec))) for _ in range(per_record)]
        for what, pos in spots:
            mutated = bytearray(data)
            mutated[pos] ^= 1 << rng.randrange(8)
            yield f"record {i} {what} byte {pos}", bytes(mutated), off


def payload_flips(data: bytes, quorum: int, rng: random.Random, sample: int = 4):
    """Flip one byte inside a block and re-frame it, so only the content checks
    (digest, linkage, signatures) can catch the damage."""
    recs = scan_records(data).records
    for i in sorted(rng.sample(range(len(recs)), min(sample, len(recs)))):
        off, rec = recs[i]
        block = decode_frame(rec)
        h, b = block.header, block.batch
        j = rng.randrange(len(b.txs))
        t = b.txs[j]
        p = bytearray(t.payload)
        p[rng.randrange(len(p))] ^= 0x01
        txs = b.txs[:j] + (Transaction(bytes(p), t.client_sig),) + b.txs[j + 1:]
        yield (f"block {i} tx byte", _with_record(data, recs, i, encode_frame(Block(h, Batch(b.id, txs, b.digest)))), off)
        prev = bytearray(h.prev_hash)
        prev[rng.randrange(32)] ^= 0x80
        bad = BlockHeader(h.number, bytes(prev), h.batch_id, h.digest, h.sigs)
        yield f"block {i} prev_hash byte", _with_record(data, recs, i, encode_frame(Block(bad, b))), off
        if len(h.sigs) == quorum:
            party, sig = h.sigs[0]
            s = bytearray(sig)
            s[rng.randrange(len(s))] ^= 0x04
            bad = BlockHeader(h.number, h.prev_hash, h.batch_id, h.digest,
                              ((party, bytes(s)),) + h.sigs[1:])
            yield f"block {i} signature byte", _with_record(data, recs, i, encode_frame(Block(bad, b))), off
