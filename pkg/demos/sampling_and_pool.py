"""
Spot-checking batches and the constant-time bundling pool
=========================================================

A secondary checks R random txs of an M-tx batch. If K are invalid, the
check misses all of them with probability C(M-K, R) / C(M, R).
"""
# %%
import random
from math import comb

import numpy as np

from arma.batcher import sample_verify
from arma.mempool import BundlingPool
from arma.model import Batch, BatchId, Transaction

m, k = 200, 20
batch = Batch.build(BatchId(0, 0, 0, 0), [Transaction(i.to_bytes(4, "big")) for i in range(m)])
rng = random.Random(7)
bad = {t.tx_id for t in rng.sample(batch.txs, k)}

# %%
trials = 20_000
for r in (1, 5, 10, 20, 40):
    hits = np.fromiter((sample_verify(batch, r, rng, lambda t: t.tx_id not in bad) is None
                        for _ in range(trials)), dtype=bool, count=trials)
    print(f"R={r:2d}  miss rate {hits.mean():.4f}  exact {comb(m - k, r) / comb(m, r):.4f}")

# %%
# Handing out the next batch touches only the batch itself, however many
# txs sit behind it.
for population in (10, 1_000, 100_000):
    pool = BundlingPool(max_txs=10, max_bytes=1 << 30, timeout=1, capacity=1 << 20)
    for i in range(population):
        pool.insert(Transaction(i.to_bytes(8, "big")))
    pool.ops = 0
    pool.next_batch()
    print(f"pool of {population:>6}: {pool.ops} ops")
