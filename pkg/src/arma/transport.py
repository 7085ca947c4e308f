"""Addresses and the minimal send interface node state machines depend on."""
from __future__ import annotations

from typing import NamedTuple, Protocol

ROUTER = "router"
BATCHER = "batcher"
CONSENTER = "consenter"
ASSEMBLER = "assembler"
CLIENT = "client"
SEQUENCER = "sequencer"


class Address(NamedTuple):
    role: str
    party: int
    shard: int = -1

    def __str__(self) -> str:
        return f"{self.role}{self.party}" + (f".{self.shard}" if self.shard >= 0 else "")


def router_addr(party: int) -> Address:
    return Address(ROUTER, party)


def batcher_addr(party: int, shard: int) -> Address:
    return Address(BATCHER, party, shard)


def consenter_addr(party: int) -> Address:
    return Address(CONSENTER, party)


def assembler_addr(party: int) -> Address:
    return Address(ASSEMBLER, party)


SEQUENCER_ADDR = Address(SEQUENCER, -1)


class Transport(Protocol):
    def now(self) -> int: ...

    def send(self, src: Address, dst: Address, msg: object) -> bool:
        """Queue ``msg`` for delivery; False when ``dst`` is known to be unreachable."""
        ...


class Recorder:
    """In-memory transport for unit tests: records sends, never delivers."""

    def __init__(self, now: int = 0):
        self.time = now
        self.sent: list[tuple[Address, Address, object]] = []
        self.down: set[Address] = set()

    def now(self) -> int:
        return self.time

    def send(self, src: Address, dst: Address, msg: object) -> bool:
        if dst in self.down:
            return False
        self.sent.append((src, dst, msg))
        return True

    def take(self, dst: Address | None = None, kind: type | None = None) -> list:
        keep, out = [], []
        for item in self.sent:
            if (dst is None or item[1] == dst) and (kind is None or isinstance(item[2], kind)):
                out.append(item)
            else:
                keep.append(item)
        self.sent = keep
        return out
