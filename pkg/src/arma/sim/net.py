"""Discrete-event core and the simulated network."""
from __future__ import annotations

import heapq
import random
from collections import deque
from dataclasses import dataclass, field
from itertools import count

from ..config import MS
from ..transport import CLIENT, SEQUENCER, Address

LINK_DELAYS_MS = (10, 17, 20)


@dataclass(frozen=True)
class Partition:
    start: int
    end: int
    isolate: tuple[int, ...]       # these parties lose contact with everyone else

    def cuts(self, a: int, b: int, now: int) -> bool:
        if not self.start <= now < self.end:
            return False
        return (a in self.isolate) != (b in self.isolate)


@dataclass(frozen=True)
class DropRule:
    """Drop messages matching every given field during [start, end)."""
    kind: str | None = None         # message class name
    src_party: int | None = None
    dst_party: int | None = None
    src_role: str | None = None
    dst_role: str | None = None
    start: int = 0
    end: int = 1 << 62

    def matches(self, src: Address, dst: Address, msg, now: int) -> bool:
        return (self.start <= now < self.end
                and (self.kind is None or type(msg).__name__ == self.kind)
                and (self.src_party is None or src.party == self.src_party)
                and (self.dst_party is None or dst.party == self.dst_party)
                and (self.src_role is None or src.role == self.src_role)
                and (self.dst_role is None or dst.role == self.dst_role))


@dataclass
class NetModel:
    delays_ms: tuple[int, ...] = LINK_DELAYS_MS
    intra_party: int = 200               # microseconds between roles of one party
    jitter: int = 1 * MS
    drop_rate: float = 0.0
    partitions: list[Partition] = field(default_factory=list)
    drop_rules: list[DropRule] = field(default_factory=list)

    @property
    def max_delay(self) -> int:
        return max(self.delays_ms) * MS + self.jitter


class InvariantViolation(Exception):
    def __init__(self, message: str, trace: list[str]):
        super().__init__(message)
        self.trace = trace


class Network:
    """Priority-queue event loop; also the Transport every node sends through.

    Links are FIFO: a message is never delivered before an earlier one on the
    same (src, dst) pair. The sequencer is a site of its own with a per-party
    delay drawn like the inter-party links.
    """

    def __init__(self, n_parties: int, model: NetModel, rng: random.Random):
        self.model = model
        self.rng = rng
        self.time = 0
        self._q: list = []
        self._seq = count()
        self.nodes: dict[Address, object] = {}
        self.down: set[Address] = set()
        self.down_parties: set[int] = set()
        self.filters: list = []             # callables (src, dst, msg, now) -> bool (True drops)
        n = n_parties
        # sites 0..n-1 are parties, n the sequencer, n+1 the clients
        self.link = [[0] * (n + 2) for _ in range(n + 2)]
        for a in range(n + 2):
            for b in range(a + 1, n + 2):
                d = rng.choice(model.delays_ms) * MS
                self.link[a][b] = self.link[b][a] = d
        self._n = n
        self._last: dict[tuple[Address, Address], int] = {}
        self.trace: deque[str] = deque(maxlen=64)
        self.sent = 0
        self.dropped = 0
        self.delivered = 0

    def now(self) -> int:
        return self.time

    def register(self, addr: Address, node) -> None:
        self.nodes[addr] = node

    def _site(self, a: Address) -> int:
        if a.role == SEQUENCER:
            return self._n
        if a.role == CLIENT:
            return self._n + 1
        return a.party

    def is_down(self, addr: Address) -> bool:
        if addr in self.down:
            return True
        return addr.role not in (SEQUENCER, CLIENT) and addr.party in self.down_parties

    def send(self, src: Address, dst: Address, msg) -> bool:
        if self.is_down(dst):
            return False
        if self.is_down(src):
            return True
        self.sent += 1
        now = self.time
        m = self.model
        sa, sb = self._site(src), self._site(dst)
        if sa != sb:
            if m.drop_rate and self.rng.random() < m.drop_rate:
                self.dropped += 1
                return True
            for p in m.partitions:
                if p.cuts(sa, sb, now):
                    self.dropped += 1
                    return True
        for r in m.drop_rules:
            if r.matches(src, dst, msg, now):
                self.dropped += 1
                return True
        for flt in self.filters:
            if flt(src, dst, msg, now):
                self.dropped += 1
                return True
        if sa == sb:
            delay = m.intra_party
        else:
            delay = self.link[sa][sb] + (self.rng.randrange(m.jitter) if m.jitter else 0)
        at = now + delay
        key = (src, dst)
        last = self._last.get(key, 0)
        if at < last:
            at = last
        self._last[key] = at
        heapq.heappush(self._q, (at, next(self._seq), 0, dst, src, msg))
        return True

    def schedule(self, at: int, fn) -> None:
        heapq.heappush(self._q, (at, next(self._seq), 1, None, None, fn))

    def run_until(self, end: int, stop=None) -> None:
        q = self._q
        pop = heapq.heappop
        nodes = self.nodes
        while q and q[0][0] <= end:
            at, _, kind, dst, src, payload = pop(q)
            self.time = at
            if kind == 1:
                payload(at)
                if stop is not None and stop():
                    return
                continue
            if self.is_down(dst):
                continue
            node = nodes.get(dst)
            if node is None:
                continue
            self.delivered += 1
            self.trace.append(f"{at} {src}->{dst} {type(payload).__name__}")
            node.on_message(src, payload, at)
        self.time = max(self.time, end)
