"""Scripted Byzantine batchers. Crashes are handled by the network itself."""
from __future__ import annotations

from ..batcher import BatcherNode
from ..mempool import InsertResult
from ..model import Batch, BatchAttestationShare, Transaction, sha256
from .scenario import FaultSpec


def censored(fs: FaultSpec, tx: Transaction) -> bool:
    return fs.predicate == "all" or tx.tx_id[-1] % 2 == 0


class CensoringBatcher(BatcherNode):
    """As primary, silently disregards client transactions matching the predicate."""

    fault: FaultSpec

    def on_tx(self, tx, now):
        if self.is_primary and self.fault.active(now) and censored(self.fault, tx):
            return InsertResult.DUPLICATE
        return super().on_tx(tx, now)

    def primary_step(self, now):
        # txs carried into the bundling pool on a term change skip on_tx
        if self.is_primary and self.fault.active(now):
            pool = self.bundling
            drop = [t.tx_id for b in pool.full for t in b if censored(self.fault, t)]
            drop += [t.tx_id for t in pool.open if censored(self.fault, t)]
            if drop:
                pool.discard(drop)
        return super().primary_step(now)


class SilentBatcher(BatcherNode):
    """As primary, forms no batches and ignores pulls."""

    fault: FaultSpec

    def primary_step(self, now):
        if self.fault.active(now):
            return []
        return super().primary_step(now)

    def serves(self, src, req):
        return not (self.is_primary and self.fault.active(self.now))


class BogusBatcher(BatcherNode):
    """As primary, replaces K of every M slots in a batch with unsigned junk."""

    fault: FaultSpec
    _junk = 0

    def _propose(self, txs, now, digest_hint=None):
        fs = self.fault
        if digest_hint is None and fs.active(now):
            txs = list(txs)
            k = max(1, len(txs) * fs.invalid // fs.per)
            keep, back = txs[:max(0, len(txs) - k)], txs[max(0, len(txs) - k):]
            for tx in back:
                self.bundling.insert(tx, now)
            junk = []
            for _ in range(k):
                self._junk += 1
                junk.append(Transaction(b"junk/%d/%d/%d" % (self.party, self.shard, self._junk),
                                        b"\x00" * 32))
            txs = keep + junk
        return super()._propose(txs, now, digest_hint)


class EquivocatingBatcher(BatcherNode):
    """Alongside every real share, attests a fabricated digest for the same slot."""

    fault: FaultSpec

    def _share(self, batch: Batch, now: int) -> None:
        super()._share(batch, now)
        if self.fault.active(now):
            fake = sha256(b"fake" + batch.digest)
            s = BatchAttestationShare(batch.id, fake, self.party, self.config.epoch_of(now))
            s = BatchAttestationShare(s.batch_id, s.digest, s.signer, s.epoch, (),
                                      self.key.sign(s.signing_bytes()))
            self._broadcast(s)


class ReplayingBatcher(BatcherNode):
    """Keeps its old shares and keeps re-sending those past the epoch window."""

    fault: FaultSpec

    def make_share(self, batch, now, pointers=True):
        share = super().make_share(batch, now, pointers)
        self.__dict__.setdefault("_history", []).append(share)
        return share

    def tick(self, now: int) -> None:
        super().tick(now)
        hist = self.__dict__.get("_history")
        if hist and self.fault.active(now) and now % (10 * self.config.tick) < self.config.tick:
            horizon = self.config.epoch_of(now) - self.config.max_epoch_skew
            for s in [s for s in hist if s.epoch < horizon][-4:]:
                self._broadcast(s)


BEHAVIOURS = {
    "censor": CensoringBatcher,
    "silent_primary": SilentBatcher,
    "bogus_primary": BogusBatcher,
    "equivocate_shares": EquivocatingBatcher,
    "stale_epoch_replayer": ReplayingBatcher,
}


def batcher_class(faults: list[FaultSpec], party: int, shard: int):
    """Pick the batcher class for (party, shard); returns (cls, fault or None)."""
    for fs in faults:
        if fs.party != party or fs.kind not in BEHAVIOURS:
            continue
        if fs.role not in ("party", "batcher"):
            continue
        if fs.shard is not None and fs.shard != shard:
            continue
        return BEHAVIOURS[fs.kind], fs
    return BatcherNode, None
