"""Per-(party, shard) batcher: primary bundling, secondary pulling and
attesting, censorship complaints and carry-over of a failed primary's
batches after a term change."""
from __future__ import annotations

import logging
import random
from dataclasses import dataclass

from .codec import decode_frame, encode_frame
from .config import Config
from .crypto import KeyRing, SigningKey
from .mempool import BundlingPool, InsertResult, SeenSet, TrackingPool
from .model import (Batch, BatchAttestationShare, BatchId, BatchPullRequest, ComplaintVote,
                    OrphanPtr, Transaction)
from .router import TxBundle, validate_tx
from .storage import RecordLog
from .transport import Address, Transport, batcher_addr, consenter_addr, router_addr

log = logging.getLogger(__name__)


class LedgerError(Exception):
    pass


class BatchLedger:
    """Append-only batch log with (term, seq) and digest indexes rebuilt on open."""

    def __init__(self, log_: RecordLog | None = None):
        self.log = log_ if log_ is not None else RecordLog()
        self._at: dict[tuple[int, int], Batch] = {}
        self._offset: dict[tuple[int, int], int] = {}
        self._by_digest: dict[bytes, tuple[int, int]] = {}
        self._heights: dict[int, int] = {}
        for off, rec in self.log.records():
            self._index(decode_frame(rec), off)

    def _index(self, batch: Batch, offset: int) -> None:
        pos = (batch.id.term, batch.id.seq)
        if batch.id.seq != self._heights.get(batch.id.term, 0):
            raise LedgerError(f"non-contiguous batch {batch.id}")
        self._at[pos] = batch
        self._offset[pos] = offset
        self._by_digest.setdefault(batch.digest, pos)
        self._heights[batch.id.term] = batch.id.seq + 1

    def height(self, term: int) -> int:
        return self._heights.get(term, 0)

    def append(self, batch: Batch) -> int:
        if batch.id.seq != self.height(batch.id.term):
            raise LedgerError(f"expected seq {self.height(batch.id.term)}, got {batch.id}")
        off = self.log.append(encode_frame(batch))
        self._index(batch, off)
        return off

    def get(self, term: int, seq: int) -> Batch | None:
        return self._at.get((term, seq))

    def offset(self, term: int, seq: int) -> int | None:
        return self._offset.get((term, seq))

    def by_digest(self, digest: bytes) -> Batch | None:
        pos = self._by_digest.get(digest)
        return self._at[pos] if pos is not None else None

    def term_range(self, term: int, start: int, limit: int) -> list[Batch]:
        end = min(self.height(term), start + limit)
        return [self._at[(term, s)] for s in range(start, end)]

    def __len__(self) -> int:
        return len(self._at)

    def __iter__(self):
        return iter(self._at.values())


def sample_verify(batch: Batch, r: int, rng: random.Random, is_valid) -> bytes | None:
    """Check min(r, M) distinct uniformly chosen txs; return the first invalid tx id found."""
    txs = batch.txs
    m = len(txs)
    for i in rng.sample(range(m), min(r, m)):
        if not is_valid(txs[i]):
            return txs[i].tx_id
    return None


@dataclass(frozen=True, slots=True)
class BatchPullResponse:
    shard: int
    batches: tuple[Batch, ...]
    digest: bytes | None = None     # set when answering a digest pull


class _Outstanding:
    __slots__ = ("share", "epoch", "seen_pending", "last_seen", "resubmits")

    def __init__(self, share: BatchAttestationShare, epoch: int):
        self.share = share
        self.epoch = epoch
        self.seen_pending = False
        self.last_seen = epoch
        self.resubmits = 0


class BatcherNode:
    def __init__(self, party: int, shard: int, config: Config, key: SigningKey,
                 keys: KeyRing | None, out: Transport, ledger: BatchLedger | None = None,
                 seed: int = 0):
        self.party = party
        self.shard = shard
        self.config = config
        self.key = key
        self.keys = keys
        self.out = out
        self.addr = batcher_addr(party, shard)
        self.ledger = ledger if ledger is not None else BatchLedger()
        self.rng = random.Random(f"sample/{seed}/{party}/{shard}")
        self.term = 0
        self.seen = SeenSet(config.seen_ttl_epochs * config.epoch_length)
        self.bundling = BundlingPool(config.batch_max_txs, config.batch_max_bytes,
                                     config.batch_timeout, config.max_pool_txs)
        self.tracking = TrackingPool(config.forward_timeout, config.complaint_timeout,
                                     config.bucket_width, self.seen, config.max_pool_txs)
        self.next_seq = 0
        self.reproposed: dict[bytes, None] = {}
        self.parked_pulls: dict[Address, BatchPullRequest] = {}
        self.outstanding: dict[tuple, _Outstanding] = {}
        self.pointed: dict[tuple, None] = {}
        self.pending_view: tuple = ()
        self.collected_digests: dict[bytes, int] = {}
        self.last_round = -1
        self.complained_term: int | None = None
        self.complaint_sent_at = 0
        self.blocked = False            # invalid batch seen this term; stop pulling
        self.last_pull_at: int | None = None
        self.forward_retry: list[Transaction] = []
        self.halted = False
        self.now = 0
        self.stats = {"batches": 0, "shares": 0, "complaints": 0, "forwarded": 0,
                      "resubmits": 0, "reproposed": 0}

    # -- role ------------------------------------------------------------
    @property
    def primary(self) -> int:
        return self.config.primary(self.shard, self.term)

    @property
    def is_primary(self) -> bool:
        return self.primary == self.party

    def _consenters(self):
        return [consenter_addr(p) for p in range(self.config.n_parties)]

    def is_valid_tx(self, tx: Transaction) -> bool:
        return validate_tx(tx, self.config, self.keys) is None and not tx.is_reconfig

    # -- ingress -----------------------------------------------------------
    def on_tx(self, tx: Transaction, now: int) -> InsertResult:
        if self.halted:
            return InsertResult.BACKPRESSURE
        if tx.tx_id in self.seen:
            return InsertResult.DUPLICATE
        if self.is_primary:
            res = self.bundling.insert(tx, now)
            if res is InsertResult.ACCEPTED and self.bundling.full:
                self.primary_step(now)
            return res
        return self.tracking.insert(tx, now)

    # -- primary -------------------------------------------------------------
    def primary_step(self, now: int) -> list[Batch]:
        made = []
        if self.halted or not self.is_primary:
            return made
        while self.bundling.seal_due(now):
            txs = self.bundling.next_batch(now)
            if not txs:
                break
            made.append(self._propose(txs, now))
        if made:
            self._serve_parked()
        return made

    def _propose(self, txs, now: int, digest_hint: Batch | None = None) -> Batch:
        bid = BatchId(self.shard, self.party, self.term, self.next_seq)
        batch = digest_hint.with_id(bid) if digest_hint is not None else Batch.build(bid, txs)
        if not self._persist(batch):
            return batch
        self.next_seq += 1
        for tx in batch.txs:
            self.seen.add(tx.tx_id, now)
        self.stats["batches"] += 1
        self._share(batch, now)
        return batch

    def _persist(self, batch: Batch) -> bool:
        try:
            self.ledger.append(batch)
            return True
        except (OSError, LedgerError) as exc:
            log.error("batcher %s halting: ledger write failed: %s", self.addr, exc)
            self.halted = True
            return False

    # -- shares ----------------------------------------------------------------
    def select_orphan_pointers(self, own: BatchId, now_epoch: int) -> tuple[OrphanPtr, ...]:
        cap = self.config.orphan_ptr_cap
        mine = {rec.share.digest for rec in self.outstanding.values()}
        out = []
        for e in self.pending_view:
            if len(out) >= cap:
                break
            s = e.share
            b = s.batch_id
            if e.epoch + 1 >= now_epoch or (b.term, b.seq) >= (own.term, own.seq):
                continue
            if s.digest in mine:
                continue
            target = (s.key, s.signer)
            if target in self.pointed:
                continue
            self.pointed[target] = None
            out.append(OrphanPtr(b, s.digest, s.signer))
        return tuple(out)

    def make_share(self, batch: Batch, now: int, pointers: bool = True) -> BatchAttestationShare:
        epoch = self.config.epoch_of(now)
        ptrs = self.select_orphan_pointers(batch.id, epoch) if pointers else ()
        unsigned = BatchAttestationShare(batch.id, batch.digest, self.party, epoch, ptrs)
        return BatchAttestationShare(batch.id, batch.digest, self.party, epoch, ptrs,
                                     self.key.sign(unsigned.signing_bytes()))

    def _share(self, batch: Batch, now: int) -> None:
        if batch.digest in self.collected_digests:
            return      # already has a threshold; a share now would only be an orphan
        share = self.make_share(batch, now)
        self.outstanding[share.key] = _Outstanding(share, share.epoch)
        self._broadcast(share)
        self.stats["shares"] += 1

    def _broadcast(self, msg) -> None:
        for dst in self._consenters():
            self.out.send(self.addr, dst, msg)

    # -- secondary -------------------------------------------------------------
    def secondary_pull(self, now: int) -> BatchPullRequest | None:
        if self.halted or self.is_primary or self.blocked:
            return None
        req = BatchPullRequest(self.shard, self.term, self.ledger.height(self.term))
        self.out.send(self.addr, batcher_addr(self.primary, self.shard), req)
        self.last_pull_at = now
        return req

    def process_pulled_batch(self, batch: Batch, now: int) -> str:
        """Returns 'shared', 'complained' or 'discarded'."""
        cfg = self.config
        b = batch.id
        if (self.is_primary or self.blocked or b.shard != self.shard or b.term != self.term
                or b.seq != self.ledger.height(self.term) or b.primary != self.primary):
            return "discarded"
        if not batch.is_well_formed() or len(batch.txs) > cfg.batch_max_txs:
            self.issue_complaint(now, None)
            self.blocked = True
            return "complained"
        bad = sample_verify(batch, cfg.sample_size, self.rng, self.is_valid_tx)
        if bad is not None:
            self.issue_complaint(now, bad)
            self.blocked = True
            return "complained"
        if not self._persist(batch):
            return "discarded"
        self.tracking.remove_batch(batch.txs, now)
        self._share(batch, now)
        return "shared"

    def issue_complaint(self, now: int, evidence: bytes | None = None) -> ComplaintVote | None:
        if self.complained_term == self.term:
            return None
        vote = ComplaintVote(self.shard, self.term, self.party, evidence)
        vote = ComplaintVote(self.shard, self.term, self.party, evidence,
                             self.key.sign(vote.signing_bytes()))
        self._last_complaint = vote
        self.complained_term = self.term
        self.complaint_sent_at = now
        self._broadcast(vote)
        self.stats["complaints"] += 1
        log.info("batcher %s complains about term %d", self.addr, self.term)
        return vote

    def forward_overdue(self, txs, now: int) -> int:
        dst = router_addr(self.primary)
        live = [tx for tx in list(self.forward_retry) + list(txs)
                if tx.tx_id in self.tracking]     # batched in the meantime: removal wins
        sent = 0
        if not live:
            self.forward_retry = []
        elif self.out.send(self.addr, dst, live[0] if len(live) == 1 else TxBundle(tuple(live))):
            sent = len(live)
            self.forward_retry = []
        else:
            self.forward_retry = live
        self.stats["forwarded"] += sent
        return sent

    # -- consensus feedback -----------------------------------------------------
    def on_round_notice(self, notice, now: int) -> None:
        if notice.round <= self.last_round or self.halted:
            return
        self.last_round = notice.round
        epoch = notice.epoch
        for d in notice.collected:
            self.collected_digests[d] = now
        if notice.collected:
            done = set(notice.collected)
            for k in [k for k, r in self.outstanding.items() if r.share.digest in done]:
                del self.outstanding[k]
        for tc in notice.term_changes:
            if tc.shard == self.shard and tc.new_term > self.term:
                self.on_term_change(tc.new_term, tc.pending, now)
        if notice.terms[self.shard] > self.term:
            self.on_term_change(notice.terms[self.shard],
                                tuple(e.share for e in notice.pending[self.shard]), now)
        self.pending_view = notice.pending[self.shard]
        self._track_outstanding(epoch, now)
        if self.pointed:
            live = {(e.share.key, e.share.signer) for e in self.pending_view}
            self.pointed = {t: None for t in self.pointed if t in live}

    def _track_outstanding(self, epoch: int, now: int) -> None:
        if not self.outstanding:
            return
        mine = {e.share.key for e in self.pending_view if e.share.signer == self.party}
        for key, rec in list(self.outstanding.items()):
            if rec.share.batch_id.term != self.term:
                del self.outstanding[key]
                continue
            if key in mine:
                rec.seen_pending = True
                rec.last_seen = epoch
                continue
            if rec.seen_pending or epoch - rec.last_seen >= 2:
                if rec.resubmits >= self.config.max_resubmits:
                    continue
                batch = self.ledger.get(rec.share.batch_id.term, rec.share.batch_id.seq)
                if batch is None or batch.digest != rec.share.digest:
                    continue
                share = self.make_share(batch, now, pointers=False)
                rec.share, rec.epoch, rec.last_seen = share, share.epoch, epoch
                rec.seen_pending = False
                rec.resubmits += 1
                self.stats["resubmits"] += 1
                self._broadcast(share)

    def on_term_change(self, new_term: int, pending_shares, now: int) -> None:
        if new_term <= self.term:
            return
        was_primary = self.is_primary
        self.term = new_term
        self.next_seq = 0
        self.reproposed = {}
        self.parked_pulls = {}
        self.blocked = False
        self.complained_term = None
        self.forward_retry = []
        self.outstanding = {}
        self.last_pull_at = None
        log.info("batcher %s enters term %d (primary %d)", self.addr, new_term, self.primary)
        if self.is_primary:
            carried = self.tracking.drain()
            if not was_primary:
                for tx in carried:
                    self.bundling.insert(tx, now)
            self.failover(pending_shares, now)
            self.primary_step(now)
        else:
            if was_primary:
                for tx in self.bundling.drain():
                    self.tracking.insert(tx, now)
            else:
                self.tracking.reset_timers(now)
            self.secondary_pull(now)

    def failover(self, pending_shares, now: int) -> list[Batch]:
        """Re-propose batches of earlier terms that are pending below the threshold
        and held locally."""
        groups: dict[tuple, dict[int, BatchAttestationShare]] = {}
        for s in pending_shares:
            if s.batch_id.shard == self.shard:
                groups.setdefault(s.key, {}).setdefault(s.signer, s)
        out = []
        for key, by_signer in groups.items():
            if len(by_signer) >= self.config.threshold:
                continue
            for s in by_signer.values():
                held = self.ledger.get(s.batch_id.term, s.batch_id.seq)
                if held is None or held.digest != s.digest or held.id != s.batch_id:
                    continue
                if s.batch_id.term >= self.term or s.digest in self.reproposed:
                    continue
                if s.digest in self.collected_digests:
                    continue
                self.reproposed[s.digest] = None
                self.bundling.discard([t.tx_id for t in held.txs])
                out.append(self._propose(held.txs, now, digest_hint=held))
                self.stats["reproposed"] += 1
        return out

    # -- pull service -----------------------------------------------------------
    def serves(self, src: Address, req: BatchPullRequest) -> bool:
        return True

    def on_pull(self, src: Address, req: BatchPullRequest) -> None:
        if self.halted or not self.serves(src, req):
            return
        if req.digest is not None:
            b = self.ledger.by_digest(req.digest)
            self.out.send(self.addr, src, BatchPullResponse(self.shard, (b,) if b else (), req.digest))
            return
        if not self.is_primary or req.term != self.term:
            return
        if req.seq < self.ledger.height(self.term):
            self.out.send(self.addr, src, BatchPullResponse(
                self.shard, tuple(self.ledger.term_range(self.term, req.seq, self.config.pull_window))))
        else:
            self.parked_pulls[src] = req

    def _serve_parked(self) -> None:
        if not self.parked_pulls:
            return
        parked, self.parked_pulls = self.parked_pulls, {}
        for src, req in parked.items():
            self.on_pull(src, req)

    def on_pull_response(self, resp: BatchPullResponse, now: int) -> None:
        if self.halted or resp.digest is not None:
            return
        progressed = False
        for b in resp.batches:
            if self.process_pulled_batch(b, now) == "shared":
                progressed = True
        if progressed:
            self.secondary_pull(now)

    # -- driver -----------------------------------------------------------------
    def on_message(self, src: Address, msg, now: int) -> None:
        self.now = now
        if isinstance(msg, Transaction):
            self.on_tx(msg, now)
        elif isinstance(msg, TxBundle):
            for tx in msg.txs:
                self.on_tx(tx, now)
        elif isinstance(msg, BatchPullRequest):
            self.on_pull(src, msg)
        elif isinstance(msg, BatchPullResponse):
            self.on_pull_response(msg, now)
        elif hasattr(msg, "term_changes"):
            self.on_round_notice(msg, now)

    def tick(self, now: int) -> None:
        self.now = now
        if self.halted:
            return
        self.seen.gc(now)
        if self.is_primary:
            self.primary_step(now)
            return
        cfg = self.config
        if self.last_pull_at is None or now - self.last_pull_at >= cfg.pull_timeout:
            self.secondary_pull(now)
        forward, due = self.tracking.overdue(now)
        if forward or self.forward_retry:
            self.forward_overdue(forward, now)
        if due:
            if self.complained_term != self.term:
                self.issue_complaint(now)
            elif now - self.complaint_sent_at >= cfg.complaint_timeout:
                self.complaint_sent_at = now
                self._broadcast(self._last_complaint)
        if len(self.collected_digests) > 4096:
            horizon = now - self.seen.ttl
            self.collected_digests = {d: t for d, t in self.collected_digests.items() if t >= horizon}

    def idle(self) -> bool:
        return len(self.bundling) == 0 and len(self.tracking) == 0
