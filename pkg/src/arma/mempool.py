"""Memory pools for the two batcher roles.

``BundlingPool`` is the primary's pool: a batch being filled plus a FIFO of
sealed batches, so retrieval is a single dequeue. ``TrackingPool`` is the
secondary's pool: transactions sit in time buckets until a batch from the
primary removes them; buckets that stay non-empty past the timers drive
forwarding and, later, complaints.
"""
from __future__ import annotations

import threading
from collections import deque
from enum import Enum
from itertools import count

from .model import Transaction


class InsertResult(Enum):
    ACCEPTED = "accepted"
    DUPLICATE = "duplicate"
    BACKPRESSURE = "backpressure"


class SeenSet:
    """Recently batched tx ids with time-based expiry."""

    def __init__(self, ttl: int):
        self.ttl = ttl
        self._expiry: dict[bytes, int] = {}
        self._order: deque[tuple[int, bytes]] = deque()

    def add(self, tx_id: bytes, now: int) -> None:
        exp = now + self.ttl
        self._expiry[tx_id] = exp
        self._order.append((exp, tx_id))

    def __contains__(self, tx_id: bytes) -> bool:
        return tx_id in self._expiry

    def __len__(self) -> int:
        return len(self._expiry)

    def gc(self, now: int) -> None:
        order, expiry = self._order, self._expiry
        while order and order[0][0] <= now:
            exp, tx_id = order.popleft()
            if expiry.get(tx_id) == exp:
                del expiry[tx_id]


class BundlingPool:
    def __init__(self, max_txs: int, max_bytes: int, timeout: int, capacity: int = 1_000_000):
        self.max_txs = max_txs
        self.max_bytes = max_bytes
        self.timeout = timeout
        self.capacity = capacity
        self.full: deque[list[Transaction]] = deque()
        self.open: list[Transaction] = []
        self.open_bytes = 0
        self.open_since: int | None = None
        self.pooled: set[bytes] = set()
        self.ops = 0            # instrumented operation count of next_batch
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.pooled)

    def __contains__(self, tx_id: bytes) -> bool:
        return tx_id in self.pooled

    def insert(self, tx: Transaction, now: int = 0) -> InsertResult:
        if tx.tx_id in self.pooled:
            return InsertResult.DUPLICATE
        if len(self.pooled) >= self.capacity:
            return InsertResult.BACKPRESSURE
        with self._lock:
            self.pooled.add(tx.tx_id)
            if not self.open:
                self.open_since = now
            self.open.append(tx)
            self.open_bytes += len(tx.payload)
            if len(self.open) >= self.max_txs or self.open_bytes >= self.max_bytes:
                self.full.append(self.open)
                self.open, self.open_bytes, self.open_since = [], 0, None
        return InsertResult.ACCEPTED

    def seal_due(self, now: int) -> bool:
        return bool(self.full) or (self.open_since is not None and
                                   now - self.open_since >= self.timeout)

    def next_batch(self, now: int | None = None) -> list[Transaction] | None:
        """Oldest sealed batch, else the open batch (once it has aged past the
        timeout when ``now`` is given), else None."""
        with self._lock:
            if self.full:
                batch = self.full.popleft()
            elif self.open and (now is None or now - self.open_since >= self.timeout):
                batch = self.open
                self.open, self.open_bytes, self.open_since = [], 0, None
            else:
                return None
        self.ops += 1
        pooled = self.pooled
        for tx in batch:
            pooled.discard(tx.tx_id)
            self.ops += 1
        return batch

    def discard(self, tx_ids) -> int:
        """Remove specific txs (rare path: a batch carried over on failover)."""
        ids = set(tx_ids) & self.pooled
        if not ids:
            return 0
        with self._lock:
            self.full = deque(b for b in ([t for t in b if t.tx_id not in ids] for b in self.full) if b)
            self.open = [t for t in self.open if t.tx_id not in ids]
            self.open_bytes = sum(len(t.payload) for t in self.open)
            if not self.open:
                self.open_since = None
            self.pooled -= ids
        return len(ids)

    def drain(self) -> list[Transaction]:
        with self._lock:
            out = [t for b in self.full for t in b] + self.open
            self.full.clear()
            self.open, self.open_bytes, self.open_since = [], 0, None
            self.pooled.clear()
        return out


class _Bucket:
    __slots__ = ("opened_at", "sealed", "txs", "stage2_at")

    def __init__(self, opened_at: int):
        self.opened_at = opened_at
        self.sealed = False
        self.txs: dict[bytes, Transaction] = {}
        self.stage2_at: int | None = None     # set once the bucket's txs are forwarded


class TrackingPool:
    def __init__(self, forward_timeout: int, complaint_timeout: int, bucket_width: int,
                 seen: SeenSet, capacity: int = 1_000_000):
        self.forward_timeout = forward_timeout
        self.complaint_timeout = complaint_timeout
        self.width = max(1, bucket_width)
        self.seen = seen
        self.capacity = capacity
        self.buckets: dict[int, _Bucket] = {}
        self.index: dict[bytes, int] = {}
        self._ids = count()
        self._open_id: int | None = None

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, tx_id: bytes) -> bool:
        return tx_id in self.index

    def _seal_if_due(self, now: int) -> None:
        bid = self._open_id
        if bid is not None:
            b = self.buckets[bid]
            if now >= b.opened_at + self.width:
                b.sealed = True
                self._open_id = None
                if not b.txs:
                    del self.buckets[bid]

    def insert(self, tx: Transaction, now: int) -> InsertResult:
        tx_id = tx.tx_id
        if tx_id in self.index or tx_id in self.seen:
            return InsertResult.DUPLICATE
        if len(self.index) >= self.capacity:
            return InsertResult.BACKPRESSURE
        self._seal_if_due(now)
        if self._open_id is None:
            self._open_id = next(self._ids)
            self.buckets[self._open_id] = _Bucket(now)
        self.buckets[self._open_id].txs[tx_id] = tx
        self.index[tx_id] = self._open_id
        return InsertResult.ACCEPTED

    def remove_batch(self, txs, now: int) -> int:
        """Drop every batched tx and remember its id so late copies are ignored."""
        removed = 0
        for tx in txs:
            tx_id = tx.tx_id
            self.seen.add(tx_id, now)
            bid = self.index.pop(tx_id, None)
            if bid is None:
                continue
            removed += 1
            b = self.buckets[bid]
            del b.txs[tx_id]
            if not b.txs and b.sealed:
                del self.buckets[bid]
        return removed

    def overdue(self, now: int) -> tuple[list[Transaction], bool]:
        """Stage-1 forward list and whether any forwarded tx is past stage 2."""
        self._seal_if_due(now)
        forward: list[Transaction] = []
        complaint_due = False
        stage2_extra = self.complaint_timeout - self.forward_timeout
        for b in self.buckets.values():
            if b.stage2_at is None:
                if now < b.opened_at + self.forward_timeout:
                    break
                b.sealed = True
                if self._open_id is not None and self.buckets.get(self._open_id) is b:
                    self._open_id = None
                forward.extend(b.txs.values())
                b.stage2_at = max(b.opened_at + self.complaint_timeout, now + stage2_extra)
            elif now >= b.stage2_at and b.txs:
                complaint_due = True
        return forward, complaint_due

    def oldest_entry(self) -> int | None:
        for b in self.buckets.values():
            return b.opened_at
        return None

    def reset_timers(self, now: int) -> None:
        """Restart both stages for every pooled tx (used when the primary changes)."""
        txs = self.drain()
        for tx in txs:
            self.insert(tx, now)

    def drain(self) -> list[Transaction]:
        out = [tx for b in self.buckets.values() for tx in b.txs.values()]
        self.buckets.clear()
        self.index.clear()
        self._open_id = None
        return out
