"""Scenario runner: wires every role of every party onto one simulated network."""
from __future__ import annotations

import hashlib
import json
import logging
import random
import struct
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..assembler import AssemblerNode
from ..codec import Ack, encode_frame
from ..config import MS, Config
from ..consenter import ConsenterNode
from ..crypto import deterministic_keys, write_keys
from ..model import Transaction, client_signing_bytes, hexd
from ..router import RouterNode, TxBundle
from ..sequencer import Sequencer
from ..transport import (CLIENT, Address, assembler_addr, batcher_addr, consenter_addr,
                         router_addr)
from .faults import batcher_class
from .net import InvariantViolation, NetModel, Network
from .scenario import Scenario

log = logging.getLogger(__name__)

REPORT_FORMAT = "arma-report/1"


def censorship_bound(config: Config, net: NetModel) -> int:
    """Harness bound on submit-to-commit time for a tx acknowledged by N-F parties
    under a chain of F censoring primaries (microseconds).

    Each censoring term costs the complaint timer plus the time to get F+1
    complaints ordered and the term change back to the batchers; the last,
    honest term costs one batch through the commit path.
    """
    d = net.max_delay + net.intra_party
    tick = config.tick
    seq = config.round_interval + tick + 2 * d           # consenter -> port -> every consenter
    per_term = config.complaint_timeout + 2 * tick + 2 * d + seq
    commit = (config.batch_timeout + 2 * tick + d        # seal, long-poll response
              + d + seq                                  # share ordered
              + 2 * d                                    # signature gossip, header push
              + 2 * d + config.pull_timeout)             # assembler batch pull, one retry
    return d + config.f * per_term + commit


@dataclass
class RunReport:
    data: dict
    records: list[dict] = field(default_factory=list)
    ledgers: dict[int, bytes] = field(default_factory=dict)
    public_keys: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.data["passed"])

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=1) + "\n"

    def records_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        (out / "records.jsonl").write_text(self.records_jsonl())
        for p, blob in sorted(self.ledgers.items()):
            (out / f"ledger-p{p}.bin").write_bytes(blob)
        keys = out / "keys"
        keys.mkdir(exist_ok=True)
        (keys / "public.json").write_text(self.public_keys)
        return out


def content_digest(blocks) -> str:
    """Digest of a ledger's unsigned header chain and batch contents.

    Two correct assemblers may hold different (equally valid) quorums of
    signatures for the same header, so agreement compares content only.
    """
    h = hashlib.sha256()
    for b in blocks:
        h.update(b.header.unsigned_bytes())
        h.update(encode_frame(b.batch))
    return h.hexdigest()


def latency_summary(latencies, submits, commits) -> dict:
    """Percentiles in ms and commit rate in tx/s (first submit to last commit)."""
    if not latencies:
        return {"count": 0, "p50_ms": 0.0, "p95_ms": 0.0, "p99_ms": 0.0, "max_ms": 0.0,
                "tps": 0.0}
    arr = np.asarray(latencies, dtype=np.int64)
    p50, p95, p99 = np.percentile(arr, [50, 95, 99])
    span = max(commits) - min(submits)
    return {"count": len(latencies), "p50_ms": round(float(p50) / MS, 3),
            "p95_ms": round(float(p95) / MS, 3), "p99_ms": round(float(p99) / MS, 3),
            "max_ms": round(int(arr.max()) / MS, 3),
            "tps": round(len(latencies) * 1e6 / span, 1) if span > 0 else 0.0}


# -- checks ---------------------------------------------------------------------

def check_agreement(report: RunReport) -> tuple[bool, str]:
    hashes = {a["content_sha256"] for a in report.data["assemblers"] if a["correct"]}
    if len(hashes) == 1:
        return True, "all correct ledgers identical"
    return False, f"{len(hashes)} distinct ledgers among correct assemblers"


def check_no_dup(report: RunReport) -> tuple[bool, str]:
    dups = report.data["duplicates"]
    bad = [d for d in dups if d["attribution"] != "failover_unheld"]
    if bad:
        return False, f"{len(bad)} unexplained duplicate commits"
    return True, f"{len(dups)} duplicates, all attributed to failover" if dups else "no duplicates"


def check_censorship_bound(report: RunReport, t_max: int | None = None) -> tuple[bool, str]:
    acked = report.data["acked"]
    bound = t_max if t_max is not None else report.data["t_max_us"]
    if acked["uncommitted"]:
        return False, f"{acked['uncommitted']} acknowledged txs never committed"
    if acked["max_latency_us"] > bound:
        return False, f"max latency {acked['max_latency_us']}us exceeds bound {bound}us"
    return True, f"max latency {acked['max_latency_us']}us within {bound}us"


def check_liveness(report: RunReport) -> tuple[bool, str]:
    if report.data["quiescent"]:
        return True, "every valid submitted tx committed on every correct assembler"
    return False, "run ended before quiescence"


CHECKERS = {"agreement": check_agreement, "no_dup": check_no_dup,
            "censorship": check_censorship_bound, "liveness": check_liveness}


# -- node wrappers ------------------------------------------------------------------

class _SimRouter(RouterNode):
    def __init__(self, sim, *a):
        super().__init__(*a)
        self.sim = sim

    def on_message(self, src, msg, now=0):
        acks = RouterNode.on_message(self, Address("sim", -1), msg, now)
        if src.role == CLIENT:
            for ack in acks:
                if ack.code == Ack.ACK:
                    self.sim.acks.setdefault(ack.tx_id, set()).add(self.party)
        return acks


class _SimAssembler(AssemblerNode):
    sim = None

    def _commit_ready(self):
        before = self.ledger.height
        super()._commit_ready()
        if self.ledger.height > before:
            self.sim.on_commit(self, before)


class _Client:
    def __init__(self, sim, plan, key, rng: random.Random, invalid_key):
        self.sim = sim
        self.plan = plan
        self.key = key
        self.addr = Address(CLIENT, 0)
        times = []
        if plan.tx_count:
            if plan.arrival == "poisson":
                t = float(plan.start)
                for _ in range(plan.tx_count):
                    t += rng.expovariate(plan.rate) * 1e6
                    times.append(int(t))
            else:
                step = 1e6 / plan.rate
                times = [plan.start + int(i * step) for i in range(plan.tx_count)]
        for b in plan.bursts:
            times.extend([b.at] * b.count)
        times.sort()
        self.schedule = times
        self.cursor = 0
        self.rng = rng
        self.targets = list(plan.submit_to) if plan.submit_to is not None else list(
            range(sim.config.n_parties))
        self.resend_q: deque = deque()      # (due, tx, resends)
        self.valid_submitted = 0

    @property
    def done(self) -> bool:
        return self.cursor >= len(self.schedule)

    def _make(self, i: int) -> Transaction:
        body = struct.pack(">Q", i) + self.rng.randbytes(self.plan.tx_size - 8)
        every = self.plan.invalid_every
        if every and i % every == every - 1:
            return Transaction(body, b"\x00" * 32)
        return Transaction(body, self.key.sign(client_signing_bytes(body)))

    def _send(self, txs) -> None:
        msg = txs[0] if len(txs) == 1 else TxBundle(tuple(txs))
        for p in self.targets:
            self.sim.net.send(self.addr, router_addr(p), msg)

    def tick(self, now: int) -> None:
        due = []
        while self.cursor < len(self.schedule) and self.schedule[self.cursor] <= now:
            tx = self._make(self.cursor)
            self.cursor += 1
            due.append(tx)
            self.sim.submitted[tx.tx_id] = now
            if tx.client_sig != b"\x00" * 32:
                self.valid_submitted += 1
                self.sim.valid.add(tx.tx_id)
            self.resend_q.append((now + self.plan.resend_after, tx, 0))
        if due:
            self._send(due)
        again = []
        q = self.resend_q
        while q and q[0][0] <= now:
            _, tx, n = q.popleft()
            if tx.tx_id in self.sim.ref_committed or tx.tx_id not in self.sim.valid:
                continue
            if n < self.plan.max_resends:
                again.append(tx)
                q.append((now + self.plan.resend_after, tx, n + 1))
        if again:
            self._send(again)

    def on_message(self, src, msg, now):
        pass


class Simulation:
    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.scenario = sc = scenario
        self.config = cfg = sc.config
        n = cfg.n_parties
        self.net = Network(n, sc.net, random.Random(f"net/{sc.seed}"))
        party_keys, client_key, self.ring = deterministic_keys(sc.seed, n, cfg.sig_scheme)
        self.party_keys = party_keys
        self.faulted = set(sc.faulted_parties())
        self.correct = [p for p in range(n) if p not in self.faulted]
        self.ref = self.correct[0]
        self.submitted: dict[bytes, int] = {}
        self.valid: set[bytes] = set()
        self.acks: dict[bytes, set[int]] = {}
        self.commits: dict[int, dict[bytes, list[int]]] = {p: {} for p in range(n)}
        self.commit_at: dict[int, dict[bytes, int]] = {p: {} for p in range(n)}
        self.commit_time = self.commit_at[self.ref]
        self.ref_committed = self.commits[self.ref]
        self.valid_committed = {p: 0 for p in range(n)}
        self.canon: list[bytes] = []

        self.routers, self.batchers, self.consenters, self.assemblers = [], {}, [], []
        for p in range(n):
            r = _SimRouter(self, p, cfg, self.ring, self.net)
            self.routers.append(r)
            self.net.register(r.addr, r)
            for s in range(cfg.n_shards):
                cls, fs = batcher_class(sc.faults, p, s)
                b = cls(p, s, cfg, party_keys[p], self.ring, self.net, seed=sc.seed)
                if fs is not None:
                    b.fault = fs
                self.batchers[(p, s)] = b
                self.net.register(b.addr, b)
            c = ConsenterNode(p, cfg, party_keys[p], self.ring, self.net)
            self.consenters.append(c)
            self.net.register(c.addr, c)
            a = _SimAssembler(p, cfg, self.ring, self.net)
            a.sim = self
            self.assemblers.append(a)
            self.net.register(a.addr, a)
        self.sequencer = Sequencer(cfg, self.net)
        self.net.register(self.sequencer.addr, self.sequencer)
        self.client = _Client(self, sc.clients, client_key, random.Random(f"client/{sc.seed}"),
                              None)
        self.net.register(self.client.addr, self.client)
        for fs in sc.faults:
            if fs.kind == "crash":
                self.net.schedule(fs.at, self._crasher(fs))
        self.quiescent = False
        self.violation: InvariantViolation | None = None
        self.pending_trace: list[list[int]] = []     # [epoch, max pending] when tracked
        self._sampled_epoch = -1

    def _crasher(self, fs):
        def crash(now):
            cfg = self.config
            if fs.role == "party":
                self.net.down_parties.add(fs.party)
            elif fs.role == "batcher":
                shards = [fs.shard] if fs.shard is not None else range(cfg.n_shards)
                for s in shards:
                    self.net.down.add(batcher_addr(fs.party, s))
            else:
                self.net.down.add({"router": router_addr, "consenter": consenter_addr,
                                   "assembler": assembler_addr}[fs.role](fs.party))
            log.info("t=%d crash %s of party %d", now, fs.role, fs.party)
        return crash

    # -- hooks --------------------------------------------------------------------
    def on_commit(self, asm: AssemblerNode, start: int) -> None:
        p = asm.party
        now = self.net.time
        mine = self.commits[p]
        correct = p not in self.faulted
        for h in range(start, asm.ledger.height):
            block = asm.ledger.blocks[h]
            hh = block.header.hash()
            if correct:
                if h < len(self.canon):
                    if self.canon[h] != hh:
                        raise InvariantViolation(
                            f"assembler {p} committed header {h} differing from another "
                            f"correct assembler", list(self.net.trace))
                else:
                    self.canon.append(hh)
            for tx in block.batch.txs:
                tid = tx.tx_id
                seen = mine.get(tid)
                if seen is None:
                    mine[tid] = [h]
                    if tid in self.valid:
                        self.valid_committed[p] += 1
                    self.commit_at[p][tid] = now
                else:
                    seen.append(h)

    def _tick(self, now: int) -> None:
        net = self.net
        down = net.is_down
        self.client.tick(now)
        for b in self.batchers.values():
            if not down(b.addr):
                b.tick(now)
        for c in self.consenters:
            if not down(c.addr):
                c.tick(now)
        self.sequencer.tick(now)
        for a in self.assemblers:
            if not down(a.addr):
                a.tick(now)
        if self.scenario.track_pending:
            epoch = self.config.epoch_of(now)
            if epoch != self._sampled_epoch:
                self._sampled_epoch = epoch
                self.pending_trace.append(
                    [epoch, max(len(c.core.pending) for c in self.consenters)])
        nxt = now + self.config.tick
        if nxt <= self.scenario.duration:
            net.schedule(nxt, self._tick)

    def _is_quiescent(self) -> bool:
        if not self.client.done:
            return False
        want = len(self.valid)
        heights = set()
        for p in self.correct:
            if self.valid_committed[p] < want:
                return False
            a = self.assemblers[p]
            if a.headers:
                return False
            heights.add(a.height)
        if len(heights) != 1:
            return False
        for p in self.correct:
            ch = self.consenters[p].chain
            if len(ch.finalized) != heights.copy().pop():
                return False
        return True

    def run(self) -> RunReport:
        sc = self.scenario
        for a in self.assemblers:
            a.subscribe(0)
        self.net.schedule(0, self._tick)
        check_every = 5 * self.config.tick
        state = {"next": check_every}

        def stop() -> bool:
            t = self.net.time
            if t < state["next"]:
                return False
            state["next"] = t + check_every
            if self._is_quiescent():
                self.quiescent = True
                return True
            return False

        try:
            self.net.run_until(sc.duration, stop)
        except InvariantViolation as exc:
            self.violation = exc
        return self.report()

    # -- report ----------------------------------------------------------------------
    def _duplicates(self) -> list[dict]:
        ref = self.assemblers[self.ref]
        out = []
        for tid, heights in self.commits[self.ref].items():
            if len(heights) < 2:
                continue
            blocks = [ref.ledger.blocks[h] for h in heights]
            first = blocks[0].header
            attribution = "unexplained"
            later = [b.header for b in blocks[1:]]
            if all(h.batch_id.term > first.batch_id.term for h in later):
                unheld = all(self.batchers[(h.batch_id.primary, h.batch_id.shard)]
                             .ledger.by_digest(first.digest) is None for h in later)
                if unheld:
                    attribution = "failover_unheld"
            out.append({"tx": hexd(tid)[:16], "heights": heights,
                        "batches": [str(b.header.batch_id) for b in blocks],
                        "attribution": attribution})
        out.sort(key=lambda d: (d["heights"], d["tx"]))
        return out

    def report(self) -> RunReport:
        sc, cfg = self.scenario, self.config
        n = cfg.n_parties
        ref = self.assemblers[self.ref]
        asm = []
        ledgers = {}
        for a in self.assemblers:
            blob = a.ledger.getvalue()
            ledgers[a.party] = blob
            times = self.commit_at[a.party]
            lat_p = [t - self.submitted[x] for x, t in times.items() if x in self.submitted]
            asm.append({"party": a.party, "correct": a.party not in self.faulted,
                        "height": a.height, "txs": sum(len(b.batch.txs) for b in a.ledger.blocks),
                        "ledger_sha256": hashlib.sha256(blob).hexdigest(),
                        "content_sha256": content_digest(a.ledger.blocks),
                        **latency_summary(lat_p, [self.submitted[x] for x in times
                                                  if x in self.submitted], list(times.values()))})
        lat = []
        records = []
        for h, block in enumerate(ref.ledger.blocks):
            for tx in block.batch.txs:
                tid = tx.tx_id
                if tid in self.submitted and self.commits[self.ref][tid][0] == h:
                    sub, com = self.submitted[tid], self.commit_time[tid]
                    lat.append(com - sub)
                    records.append({"kind": "commit", "tx": hexd(tid)[:16], "height": h,
                                    "submit_us": sub, "commit_us": com, "latency_us": com - sub})
        t_max = censorship_bound(cfg, sc.net)
        need = n - cfg.f
        acked = [t for t in self.valid if len(self.acks.get(t, ())) >= need]
        acked_lat = [self.commit_time[t] - self.submitted[t] for t in acked if t in self.commit_time]
        uncommitted = sum(1 for t in acked if t not in self.commit_time)
        term_log = []
        for tc in self.consenters[self.ref].term_log:
            term_log.append({"shard": tc.shard, "old_term": tc.old_term, "new_term": tc.new_term,
                             "round": tc.round, "complainers": list(tc.complainers),
                             "pending": len(tc.pending)})
            records.append({"kind": "term_change", **term_log[-1]})
        summary = latency_summary(lat, [self.submitted[t] for t in self.commit_time
                                        if t in self.submitted], list(self.commit_time.values()))
        tps = summary.pop("tps")
        latency = summary
        data = {
            "format": REPORT_FORMAT, "name": sc.name, "seed": sc.seed,
            "config": cfg.to_dict(), "duration_us": sc.duration, "end_us": self.net.time,
            "quiescent": self.quiescent, "faults": [
                {"party": f.party, "kind": f.kind, "role": f.role, "shard": f.shard}
                for f in sc.faults],
            "assemblers": asm, "submitted_txs": len(self.submitted),
            "valid_txs": len(self.valid), "committed_txs": len(self.commit_time),
            "latency": latency, "throughput_tps": tps,
            "acked": {"count": len(acked), "uncommitted": uncommitted,
                      "max_latency_us": max(acked_lat) if acked_lat else 0},
            "t_max_us": t_max, "duplicates": self._duplicates(), "term_changes": term_log,
            "max_pending": max(c.stats["max_pending"] for c in self.consenters),
            "pending_pruned": max(c.stats["pruned"] for c in self.consenters),
            "pending_expired": max(c.stats["expired"] for c in self.consenters),
            "pending_bound": cfg.pending_bound,
            "net": {"sent": self.net.sent, "dropped": self.net.dropped,
                    "delivered": self.net.delivered},
            "violation": None if self.violation is None else {
                "message": str(self.violation), "trace": self.violation.trace[-20:]},
        }
        if sc.track_pending:
            data["pending_trace"] = self.pending_trace
        report = RunReport(data, records, ledgers, self.ring.to_json(cfg.f))
        checks = {}
        for name, fn in CHECKERS.items():
            ok, detail = fn(report)
            checks[name] = {"passed": ok, "required": name in sc.checks, "detail": detail}
        data["checks"] = checks
        data["passed"] = self.violation is None and all(
            c["passed"] for c in checks.values() if c["required"])
        return report


def run(scenario: Scenario) -> RunReport:
    return Simulation(scenario).run()
