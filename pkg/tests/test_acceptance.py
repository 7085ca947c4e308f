"""The ten acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (shown in the terminal summary) before
asserting, so a failing criterion still reports what was measured.
"""
import random
import time
from collections import Counter
from pathlib import Path

import pytest

from arma.assembler import verify_ledger
from arma.batcher import sample_verify
from arma.cli import main as cli
from arma.config import MS, Config
from arma.consenter import ConsensusCore, ConsenterNode
from arma.crypto import KeyRing, deterministic_keys
from arma.mempool import BundlingPool
from arma.model import Batch, BatchId, Transaction
from arma.sim import ClientPlan, NetModel, Partition, Scenario, Simulation, load, run
from arma.sim.suite import random_scenario
from arma.transport import Recorder

from ledger_fixtures import payload_flips, raw_flips
from oracles import RecountOracle, miss_probability, random_stream

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
FAILOVER = ("AB", "notA-notB-a", "notA-notB-b", "notA-B", "A-notB")


def verify_report_ledgers(rep):
    """(ledgers checked, list of failures) for every assembler ledger of a run."""
    ring = KeyRing.from_json(rep.public_keys)
    q = Config(n_parties=rep.data["config"]["n_parties"], f=rep.data["config"]["f"]).quorum
    bad = []
    for party, blob in rep.ledgers.items():
        res = verify_ledger(blob, ring, q)
        if not res.ok or res.truncated_at is not None:
            bad.append((rep.data["name"], party, res.reason))
    return len(rep.ledgers), bad


@pytest.fixture(scope="module")
def suite():
    start = time.perf_counter()
    failures, violations, checked, bad = [], 0, 0, []
    samples = {}
    kinds, shapes = Counter(), Counter()
    for seed in range(500):
        sc = random_scenario(seed)
        kinds.update(f.kind for f in sc.faults)
        shapes[(sc.config.n_parties, sc.config.n_shards)] += 1
        rep = run(sc)
        d = rep.data
        violations += d["violation"] is not None
        if not (d["checks"]["agreement"]["passed"] and d["quiescent"] and d["violation"] is None):
            failures.append((seed, {k: v["detail"] for k, v in d["checks"].items() if not v["passed"]}))
        n, b = verify_report_ledgers(rep)
        checked += n
        bad += b
        if seed % 50 == 0:
            samples[seed] = rep
    return {"elapsed": time.perf_counter() - start, "failures": failures, "violations": violations,
            "ledgers": checked, "bad_ledgers": bad, "samples": samples, "kinds": kinds,
            "shapes": shapes}


@pytest.fixture(scope="module")
def censorship_runs():
    out = {}
    for n in (4, 7):
        sc = load(SCENARIOS / f"censor-chain-n{n}.scenario")
        out[n] = (sc, run(sc))
    return out


@pytest.fixture(scope="module")
def failover_runs():
    out = {}
    for case in FAILOVER:
        sim = Simulation(load(SCENARIOS / f"failover-{case}.scenario"))
        out[case] = (sim, sim.run())
    return out


def test_criterion_01_agreement_suite(suite, criterion):
    s = suite
    ok = not s["failures"] and s["violations"] == 0 and s["elapsed"] <= 600
    detail = (f"500 scenarios in {s['elapsed']:.0f}s, {len(s['failures'])} failing, "
              f"{s['violations']} violations, (N, k) {dict(sorted(s['shapes'].items()))}, "
              f"fault kinds {dict(sorted(s['kinds'].items()))}")
    criterion(1, "agreement suite", ok, detail)
    assert ok, s["failures"][:5]


def test_criterion_02_censorship_chain(censorship_runs, criterion):
    lines, ok = [], True
    for n, (sc, rep) in sorted(censorship_runs.items()):
        d = rep.data
        f = sc.config.f
        changes = [t for t in d["term_changes"] if t["shard"] == 0]
        exact = all(len(set(t["complainers"])) == len(t["complainers"]) == f + 1 for t in changes)
        acked = d["acked"]
        good = (d["passed"] and exact and len(changes) == f and acked["count"] == d["valid_txs"]
                and acked["uncommitted"] == 0 and acked["max_latency_us"] <= d["t_max_us"])
        ok &= good
        lines.append(f"N={n}: {len(changes)} rotations with {[len(t['complainers']) for t in changes]} "
                     f"complainers, max latency {acked['max_latency_us'] / MS:.0f}ms <= T_max "
                     f"{d['t_max_us'] / MS:.0f}ms")
    criterion(2, "censorship resistance", ok, "; ".join(lines))
    assert ok


def first_batch(sim):
    return sim.batchers[(0, 0)].ledger.get(0, 0)


def committed_as(sim, digest):
    ref = sim.assemblers[sim.ref]
    return [b.header.batch_id for b in ref.ledger.blocks if b.header.digest == digest]


def test_criterion_03_failover_matrix(failover_runs, criterion):
    outcome, ok = {}, True
    for case, (sim, rep) in failover_runs.items():
        d = rep.data
        bp = first_batch(sim)
        where = committed_as(sim, bp.digest)
        q_holds = sim.batchers[(1, 0)].ledger.by_digest(bp.digest) is not None
        dups = d["duplicates"]
        base = d["passed"] and d["checks"]["no_dup"]["passed"] and d["quiescent"]
        if case == "AB":
            want = where == [bp.id] and q_holds and not dups
        elif case == "notA-notB-a":
            want = where == [bp.id] and not q_holds and not dups
        elif case == "notA-notB-b":
            txs = {t.tx_id for t in bp.txs}
            once = all(len(sim.commits[sim.ref][t]) == 1 for t in txs)
            want = len(where) <= 1 and bp.id not in where and once and not dups
        elif case == "notA-B":
            want = (where == [bp.id] and not q_holds and len(dups) > 0
                    and all(x["attribution"] == "failover_unheld" for x in dups))
        else:   # A-notB
            want = (len(where) == 1 and where[0].term == 1 and where[0].primary == 1
                    and q_holds and not dups)
        outcome[case] = (base and want, len(dups), [str(w) for w in where])
        ok &= base and want
    only_dup = [c for c, (_, n, _) in outcome.items() if n] == ["notA-B"]
    ok &= only_dup
    detail = ", ".join(f"{c}: {'ok' if good else 'MISMATCH'} dups={n} b^p at {w}"
                       for c, (good, n, w) in outcome.items())
    criterion(3, "failover case matrix", ok, detail)
    assert ok, outcome


def test_criterion_04_round_oracle(criterion):
    mismatches, rounds = [], 0
    for seed in range(10_000):
        cfg, stream = random_stream(seed)
        core, oracle = ConsensusCore(cfg), RecountOracle(cfg)
        for epoch, payloads in stream:
            rounds += 1
            res = core.process_round(epoch, payloads)
            P, T, ch = oracle.step(epoch, payloads)
            got = (core.pending_shares(), list(res.groups),
                   [(c.shard, c.old_term, c.new_term, c.complainers, c.pending) for c in res.term_changes])
            if got != (P, T, ch):
                mismatches.append(seed)
                break
    ok = not mismatches
    criterion(4, "round processing equals brute-force recount", ok,
              f"10000 streams, {rounds} rounds, {len(mismatches)} mismatching")
    assert ok, mismatches[:10]


def test_criterion_05_sampling(criterion):
    trials = 100_000
    parts, ok = [], True
    for m, k, r in ((100, 50, 10), (1000, 500, 20), (1000, 10, 50)):
        batch = Batch.build(BatchId(0, 0, 0, 0), [Transaction(i.to_bytes(4, "big")) for i in range(m)])
        rng = random.Random(f"sampling/{m}/{k}/{r}")
        bad = {t.tx_id for t in rng.sample(batch.txs, k)}
        valid = lambda t: t.tx_id not in bad      # noqa: E731
        misses = sum(sample_verify(batch, r, rng, valid) is None for _ in range(trials))
        p = miss_probability(m, k, r)
        se = (p * (1 - p) / trials) ** 0.5
        rate = misses / trials
        within = abs(rate - p) <= 3 * se
        ok &= within
        parts.append(f"({m},{k},{r}) expected {p:.3e} got {rate:.3e}")
    criterion(5, "sampling miss rate within 3 SE", ok, "; ".join(parts))
    assert ok


def test_criterion_06_pending_bounded(criterion):
    cfg = Config(n_parties=4, f=1, n_shards=2, batch_max_txs=4, sample_size=2, sig_scheme="hmac",
                 round_cap=256, pull_window=64)
    load_run = Simulation(Scenario(name="load", seed=3, config=cfg, duration=40_000 * MS,
                                   clients=ClientPlan(tx_count=40_000, tx_size=32, rate=4000),
                                   track_pending=True))
    rep = load_run.run()
    d = rep.data
    batches = sum(len(b.ledger) for (p, _), b in load_run.batchers.items() if p == 0)
    trace = [n for _, n in d["pending_trace"]]
    steady = trace[2:]
    half = len(steady) // 2
    flat = max(steady[half:]) <= 1.5 * max(steady[:half])
    bounded = max(trace) <= cfg.pending_bound

    part_cfg = cfg.with_(pull_window=Config.pull_window)
    part = Simulation(Scenario(
        name="partition", seed=4, config=part_cfg, duration=30_000 * MS,
        clients=ClientPlan(tx_count=12_000, tx_size=32, rate=2000),
        net=NetModel(partitions=[Partition(2 * cfg.epoch_length, 5 * cfg.epoch_length, (3,))])))
    watch = part.consenters[0]
    watch.keep_results = True
    prep = part.run()
    fate = {}
    for res in watch.results:
        for _, shares in res.groups:
            for s in shares:
                fate.setdefault((s.key, s.signer), "grouped")
        for s in res.pruned:
            fate[(s.key, s.signer)] = "pruned"
        for s in res.expired:
            fate[(s.key, s.signer)] = "expired"
    last_epoch = watch.results[-1].epoch
    for s in watch.core.pending_shares():
        fate[(s.key, s.signer)] = "pending"
        tail = s.epoch >= last_epoch - 3
        if not tail:
            fate[(s.key, s.signer)] = "stuck"
    committed = {b.header.digest for b in part.assemblers[part.ref].ledger.blocks}
    isolated = {k: v for k, v in fate.items() if k[1] == 3}
    all_committed = all(k[0][3] in committed for k in isolated)
    kinds = Counter(isolated.values())
    part_ok = prep.passed and all_committed and "stuck" not in kinds and kinds["pruned"] > 0

    ok = (d["passed"] and batches >= 10_000 and bounded and flat and d["pending_expired"] == 0
          and part_ok)
    detail = (f"{batches} batches, max |P| {max(trace)} <= bound {cfg.pending_bound}, "
              f"steady {max(steady[:half])}->{max(steady[half:])}, {d['pending_pruned']} pruned; "
              f"3-epoch partition: isolated party's shares {dict(kinds)}, "
              f"all digests committed={all_committed}")
    criterion(6, "pending list bounded", ok, detail)
    assert ok


def test_criterion_07_mempool_constant_ops(criterion):
    def ops(population):
        pool = BundlingPool(max_txs=10, max_bytes=1 << 30, timeout=1, capacity=1 << 20)
        for i in range(population):
            pool.insert(Transaction(i.to_bytes(8, "big")))
        pool.ops = 0
        pool.next_batch()
        return pool.ops
    small, large = ops(10), ops(100_000)
    ok = small == large
    criterion(7, "next_batch operation count independent of pool size", ok,
              f"population 10 -> {small} ops, population 100000 -> {large} ops")
    assert ok


def test_criterion_08_determinism(failover_runs, criterion):
    same_report = True
    for seed in (3, 77, 401):
        a, b = run(random_scenario(seed)), run(random_scenario(seed))
        same_report &= a.to_json() == b.to_json() and a.records_jsonl() == b.records_jsonl()
        same_report &= a.ledgers == b.ledgers
    same_report &= (run(load(SCENARIOS / "failover-notA-B.scenario")).to_json()
                    == failover_runs["notA-B"][1].to_json())

    sc = load(SCENARIOS / "censor-chain-n4.scenario")
    sim = Simulation(sc)
    sim.run()

    cfg = sc.config
    keys, _, ring = deterministic_keys(sc.seed, cfg.n_parties, cfg.sig_scheme)
    replicas = [ConsenterNode(p, cfg, keys[p], ring, Recorder()) for p in (0, 2)]
    for c in replicas:
        for rnd in sim.sequencer.rounds:
            c.on_round(rnd, 0)
    chains = [b"".join(h.unsigned_bytes() for h in c.chain.derived) for c in replicas]
    live = [b"".join(h.unsigned_bytes() for h in sim.consenters[p].chain.derived) for p in sim.correct]
    same_chain = chains[0] == chains[1] and len(chains[0]) > 0 and all(x == chains[0] for x in live)
    ok = same_report and same_chain
    criterion(8, "determinism", ok,
              f"reruns byte-identical={same_report}, header chains identical across "
              f"{2 + len(live)} replicas={same_chain} ({len(replicas[0].chain.derived)} headers)")
    assert ok


def test_criterion_09_offline_verification(suite, censorship_runs, failover_runs, tmp_path, criterion, capsys):
    checked, bad = suite["ledgers"], list(suite["bad_ledgers"])
    cli_codes = []
    scripted = [rep for _, rep in censorship_runs.values()] + [rep for _, rep in failover_runs.values()]
    for rep in scripted:
        n, b = verify_report_ledgers(rep)
        checked += n
        bad += b
        out = rep.write(tmp_path / rep.data["name"])
        for ledger in sorted(out.glob("ledger-p*.bin")):
            cli_codes.append(cli(["verify-ledger", "--ledger", str(ledger), "--keys", str(out / "keys")]))

    rng = random.Random("mutations")
    mutants = wrong = 0
    for rep in list(suite["samples"].values()) + scripted:
        ring = KeyRing.from_json(rep.public_keys)
        q = Config(n_parties=rep.data["config"]["n_parties"], f=rep.data["config"]["f"]).quorum
        blob = rep.ledgers[min(rep.ledgers)]
        if not blob:
            continue
        for _, mutated, offset in list(raw_flips(blob, rng, per_record=1)) + list(payload_flips(blob, q, rng)):
            mutants += 1
            res = verify_ledger(mutated, ring, q)
            wrong += res.ok or res.offset != offset
    out = tmp_path / "failover-A-notB" / "ledger-p1.bin"
    data = out.read_bytes()
    flipped = tmp_path / "flipped.bin"
    flipped.write_bytes(data[:100] + bytes([data[100] ^ 0x10]) + data[101:])
    cli_fail = cli(["verify-ledger", "--ledger", str(flipped), "--keys", str(tmp_path / "failover-A-notB" / "keys")])
    capsys.readouterr()

    ok = not bad and set(cli_codes) == {0} and wrong == 0 and mutants > 500 and cli_fail == 1
    criterion(9, "offline ledger verification", ok,
              f"{checked} ledgers verified ({len(bad)} failed), CLI exit codes {sorted(set(cli_codes))}; "
              f"{mutants} single-byte mutants, {wrong} not caught at the right offset")
    assert ok, bad[:5]


def test_criterion_10_throughput(criterion):
    cfg = Config(n_parties=4, f=1, n_shards=4, sig_scheme="ed25519")
    sc = Scenario(name="throughput", seed=1, config=cfg, duration=30_000 * MS,
                  clients=ClientPlan(tx_count=20_000, tx_size=300, rate=20_000))
    start = time.perf_counter()
    rep = run(sc)
    wall = time.perf_counter() - start
    tps = rep.data["throughput_tps"]
    ok = rep.passed and tps >= 10_000
    criterion(10, "smoke throughput", ok,
              f"{tps:.0f} tx/s simulated commit rate (floor 10000), p99 {rep.data['latency']['p99_ms']}ms, "
              f"wall {wall:.1f}s")
    assert ok
