"""Stateless ingress: validate, map to shard, forward to this party's batcher."""
from __future__ import annotations

from dataclasses import dataclass

from .codec import Ack
from .config import Config
from .crypto import KeyRing
from .model import Transaction, client_signing_bytes, map_to_shard
from .transport import Address, Transport, batcher_addr, consenter_addr, router_addr

REJECT_EMPTY = "empty"
REJECT_OVERSIZED = "oversized"
REJECT_BAD_SIGNATURE = "bad_signature"


def validate_tx(tx: Transaction, config: Config, keys: KeyRing | None) -> str | None:
    """Return None if ``tx`` is acceptable, else a machine-readable reject reason."""
    n = len(tx.payload)
    if n == 0:
        return REJECT_EMPTY
    if n > config.max_tx_bytes:
        return REJECT_OVERSIZED
    if config.check_client_sigs:
        if keys is None or not keys.verify_client(client_signing_bytes(tx.payload), tx.client_sig):
            return REJECT_BAD_SIGNATURE
    return None


@dataclass(frozen=True, slots=True)
class TxBundle:
    """Several transactions carried in one delivery."""
    txs: tuple[Transaction, ...]


@dataclass(frozen=True, slots=True)
class RouteAck:
    tx_id: bytes
    party: int
    shard: int          # -1 for reconfiguration transactions
    code: Ack
    reason: str | None = None


class RouterNode:
    """Holds only static configuration; every call depends on its input alone."""

    def __init__(self, party: int, config: Config, keys: KeyRing | None, out: Transport):
        self.party = party
        self.config = config
        self.keys = keys
        self.out = out
        self.addr = router_addr(party)

    def route_tx(self, tx: Transaction) -> RouteAck:
        reason = validate_tx(tx, self.config, self.keys)
        if tx.is_reconfig:
            return self._forward(tx, -1, consenter_addr(self.party), reason)
        shard = map_to_shard(tx.tx_id, self.config.n_shards)
        return self._forward(tx, shard, batcher_addr(self.party, shard), reason)

    # reconfiguration transactions go to the consenter, never to a batcher
    redirect_reconfig = route_tx

    def _forward(self, tx: Transaction, shard: int, dst: Address, reason: str | None) -> RouteAck:
        if reason is not None:
            return RouteAck(tx.tx_id, self.party, shard, Ack.NACK_INVALID, reason)
        if not self.out.send(self.addr, dst, tx):
            return RouteAck(tx.tx_id, self.party, shard, Ack.NACK_UNAVAILABLE, "unavailable")
        return RouteAck(tx.tx_id, self.party, shard, Ack.ACK)

    def route_many(self, txs) -> list[RouteAck]:
        """Validate a group of txs and forward them as one bundle per destination."""
        acks: list[RouteAck | None] = []
        groups: dict[Address, list[tuple[int, Transaction]]] = {}
        for tx in txs:
            reason = validate_tx(tx, self.config, self.keys)
            shard = -1 if tx.is_reconfig else map_to_shard(tx.tx_id, self.config.n_shards)
            if reason is not None:
                acks.append(RouteAck(tx.tx_id, self.party, shard, Ack.NACK_INVALID, reason))
                continue
            dst = consenter_addr(self.party) if shard < 0 else batcher_addr(self.party, shard)
            groups.setdefault(dst, []).append((len(acks), tx))
            acks.append(None)
        for dst, items in groups.items():
            if len(items) == 1 or dst.role == "consenter":
                ok = all([self.out.send(self.addr, dst, tx) for _, tx in items])
            else:
                ok = self.out.send(self.addr, dst, TxBundle(tuple(tx for _, tx in items)))
            for i, tx in items:
                code = Ack.ACK if ok else Ack.NACK_UNAVAILABLE
                acks[i] = RouteAck(tx.tx_id, self.party, dst.shard, code,
                                   None if ok else "unavailable")
        return acks

    def on_message(self, src: Address, msg, now: int = 0) -> list[RouteAck]:
        if isinstance(msg, Transaction):
            acks = [self.route_tx(msg)]
        elif isinstance(msg, TxBundle):
            acks = self.route_many(msg.txs)
        else:
            return []
        if src.role == "client":
            for ack in acks:
                self.out.send(self.addr, src, ack)
        return acks
