"""Default total-order port: a simulated single-leader sequencer.

Consenters submit admitted payloads; the sequencer cuts a round every
``round_interval`` (at most ``round_cap`` payloads), stamps it with the
epoch of the cut time and delivers the same round to every consenter. It
stands in for a BFT ordering library, which would replace it behind the
same messages (PortSubmit in, Round out, RoundPull for gap repair).
"""
from __future__ import annotations

from collections import deque

from .config import Config
from .consenter import PortSubmit, Round, RoundPull
from .model import BatchAttestationShare, ComplaintVote, Transaction
from .transport import SEQUENCER_ADDR, Address, Transport, consenter_addr


def payload_identity(p) -> tuple:
    if isinstance(p, BatchAttestationShare):
        return ("s", p.key, p.signer, p.epoch)
    if isinstance(p, ComplaintVote):
        return ("c", p.shard, p.term, p.signer)
    if isinstance(p, Transaction):
        return ("r", p.tx_id)
    raise TypeError(type(p).__name__)


class Sequencer:
    def __init__(self, config: Config, out: Transport, members: list[Address] | None = None):
        self.config = config
        self.out = out
        self.addr = SEQUENCER_ADDR
        self.members = members if members is not None else [
            consenter_addr(p) for p in range(config.n_parties)]
        self.queue: deque = deque()
        self._ordered: dict[tuple, int] = {}     # identity -> epoch when first queued
        self.rounds: list[Round] = []
        self.last_cut = None
        self.max_pull = 64

    def submit(self, payloads, now: int) -> int:
        epoch = self.config.epoch_of(now)
        added = 0
        for p in payloads:
            ident = payload_identity(p)
            if ident in self._ordered:
                continue
            self._ordered[ident] = epoch
            self.queue.append(p)
            added += 1
        return added

    def cut(self, now: int) -> Round | None:
        if not self.queue:
            return None
        n = min(len(self.queue), self.config.round_cap)
        payloads = tuple(self.queue.popleft() for _ in range(n))
        rnd = Round(len(self.rounds), self.config.epoch_of(now), payloads)
        self.rounds.append(rnd)
        for dst in self.members:
            self.out.send(self.addr, dst, rnd)
        return rnd

    def on_message(self, src: Address, msg, now: int) -> None:
        if isinstance(msg, PortSubmit):
            self.submit(msg.payloads, now)
        elif isinstance(msg, RoundPull):
            for rnd in self.rounds[msg.from_round:msg.from_round + self.max_pull]:
                self.out.send(self.addr, src, rnd)

    def tick(self, now: int) -> None:
        if self.last_cut is None or now - self.last_cut >= self.config.round_interval:
            if self.cut(now) is not None:
                self.last_cut = now
        if len(self._ordered) > 8192:
            horizon = self.config.epoch_of(now) - self.config.max_epoch_skew - 2
            self._ordered = {k: e for k, e in self._ordered.items() if e >= horizon}
