"""Seeded random scenarios for agreement testing."""
from __future__ import annotations

import random

from ..config import MS, Config
from .net import NetModel, Partition
from .scenario import FAULT_KINDS, ClientPlan, FaultSpec, Scenario

PARTY_COUNTS = (4, 7, 10)
SHARD_COUNTS = (1, 2, 4)


def random_scenario(seed: int) -> Scenario:
    rng = random.Random(f"suite/{seed}")
    n = rng.choice(PARTY_COUNTS)
    k = rng.choice(SHARD_COUNTS)
    f = (n - 1) // 3
    cfg = Config(n_parties=n, f=f, n_shards=k, sig_scheme="hmac",
                 batch_max_txs=rng.choice((10, 25, 50)), sample_size=5)
    faults = []
    for party in rng.sample(range(n), rng.randint(0, f)):
        kind = rng.choice(FAULT_KINDS)
        faults.append(FaultSpec(
            party=party, kind=kind,
            role="party" if kind == "crash" and rng.random() < 0.7 else
                 ("batcher" if kind != "crash" else rng.choice(("batcher", "consenter", "assembler"))),
            at=rng.randrange(0, 400) * MS, predicate=rng.choice(("all", "even")),
            invalid=rng.randint(1, 3), per=10))
    partitions = []
    if rng.random() < 0.25:
        start = rng.randrange(50, 400) * MS
        iso = tuple(rng.sample(range(n), 1))
        partitions.append(Partition(start, start + rng.randrange(200, 1500) * MS, iso))
    net = NetModel(drop_rate=rng.choice((0.0, 0.0, 0.005, 0.02)), partitions=partitions)
    clients = ClientPlan(tx_count=rng.randint(40, 160), tx_size=rng.choice((32, 64, 128)),
                         rate=rng.choice((400.0, 1000.0, 2000.0)),
                         arrival=rng.choice(("uniform", "poisson")),
                         resend_after=2000 * MS)
    return Scenario(name=f"random-{seed}", seed=seed, config=cfg, duration=30_000 * MS,
                    clients=clients, net=net, faults=faults)
