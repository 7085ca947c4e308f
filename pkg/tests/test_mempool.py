import random

import pytest

from arma.mempool import BundlingPool, InsertResult, SeenSet, TrackingPool
from arma.model import Transaction


def tx(i, size=8):
    return Transaction(i.to_bytes(8, "big") + bytes(size - 8))


def test_bundling_seals_by_count_and_bytes():
    pool = BundlingPool(max_txs=3, max_bytes=10**6, timeout=100)
    for i in range(7):
        assert pool.insert(tx(i), now=i) is InsertResult.ACCEPTED
    assert [t.payload[:8] for t in pool.next_batch(0)] == [tx(i).payload[:8] for i in range(3)]
    assert len(pool.next_batch(0)) == 3
    assert pool.next_batch(5) is None            # open batch not yet aged
    assert len(pool.next_batch(106)) == 1
    assert len(pool) == 0
    by_bytes = BundlingPool(max_txs=100, max_bytes=20, timeout=100)
    for i in range(3):
        by_bytes.insert(tx(i, 10))
    assert len(by_bytes.next_batch()) == 2


def test_bundling_duplicates_and_backpressure():
    pool = BundlingPool(max_txs=10, max_bytes=10**6, timeout=5, capacity=2)
    assert pool.insert(tx(1)) is InsertResult.ACCEPTED
    assert pool.insert(tx(1)) is InsertResult.DUPLICATE
    assert pool.insert(tx(2)) is InsertResult.ACCEPTED
    assert pool.insert(tx(3)) is InsertResult.BACKPRESSURE
    assert pool.discard([tx(1).tx_id, tx(9).tx_id]) == 1
    assert [t.tx_id for t in pool.drain()] == [tx(2).tx_id]


def test_bundling_fifo_trace_against_model():
    rng = random.Random(11)
    pool = BundlingPool(max_txs=4, max_bytes=10**9, timeout=1)
    model, out = [], []
    i = 0
    for step in range(2000):
        if rng.random() < 0.7:
            pool.insert(tx(i), now=step)
            model.append(tx(i).tx_id)
            i += 1
        else:
            b = pool.next_batch(step)
            if b:
                out.extend(t.tx_id for t in b)
    while (b := pool.next_batch()):
        out.extend(t.tx_id for t in b)
    assert out == model


def test_next_batch_op_count_independent_of_population():
    def ops_for(population):
        pool = BundlingPool(max_txs=10, max_bytes=10**9, timeout=1, capacity=10**6)
        for i in range(population):
            pool.insert(tx(i))
        pool.ops = 0
        assert len(pool.next_batch()) == 10
        return pool.ops
    assert ops_for(10) == ops_for(10_000) == 11


def test_seen_set_expiry():
    s = SeenSet(ttl=10)
    s.add(b"a", 0)
    s.add(b"b", 5)
    s.gc(10)
    assert b"a" not in s and b"b" in s
    s.add(b"b", 8)                # refresh extends lifetime
    s.gc(15)
    assert b"b" in s
    s.gc(18)
    assert len(s) == 0


def make_tracking(seen=None):
    return TrackingPool(forward_timeout=100, complaint_timeout=300, bucket_width=25,
                        seen=seen or SeenSet(1000))


def test_tracking_two_stage_timers():
    pool = make_tracking()
    pool.insert(tx(1), 0)
    pool.insert(tx(2), 30)
    assert pool.overdue(99) == ([], False)
    fwd, due = pool.overdue(100)
    assert [t.tx_id for t in fwd] == [tx(1).tx_id] and not due
    fwd, due = pool.overdue(130)
    assert [t.tx_id for t in fwd] == [tx(2).tx_id] and not due
    assert pool.overdue(299) == ([], False)
    assert pool.overdue(300) == ([], True)
    pool.remove_batch([tx(1)], 310)
    assert pool.overdue(310) == ([], False)     # tx 2's bucket is not yet at stage 2
    assert pool.overdue(330)[1]
    pool.remove_batch([tx(2)], 331)
    assert len(pool) == 0 and pool.overdue(1000) == ([], False)


def test_tracking_ignores_already_batched():
    seen = SeenSet(1000)
    pool = make_tracking(seen)
    pool.remove_batch([tx(5)], 0)
    assert pool.insert(tx(5), 1) is InsertResult.DUPLICATE
    assert pool.insert(tx(6), 1) is InsertResult.ACCEPTED
    assert pool.insert(tx(6), 2) is InsertResult.DUPLICATE


def test_tracking_reset_restarts_timers():
    pool = make_tracking()
    pool.insert(tx(1), 0)
    pool.overdue(100)
    assert pool.overdue(300)[1]
    pool.reset_timers(300)
    assert pool.overdue(399) == ([], False)
    assert len(pool.overdue(400)[0]) == 1


def test_tracking_remove_order_trace():
    rng = random.Random(3)
    pool = make_tracking()
    live = set()
    for step in range(3000):
        i = rng.randrange(200)
        if rng.random() < 0.6:
            if pool.insert(tx(i), step) is InsertResult.ACCEPTED:
                live.add(i)
        else:
            pool.remove_batch([tx(i)], step)
            live.discard(i)
            pool.seen.gc(step + 10_000)   # allow re-insertion in this trace
        assert len(pool) == len(live)
    assert {t.tx_id for t in pool.drain()} == {tx(i).tx_id for i in live}
