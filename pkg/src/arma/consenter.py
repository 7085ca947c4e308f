"""Consensus-side processing of attestation shares and complaints.

``ConsensusCore`` is the deterministic part: fed the same sequence of
ordered rounds, every correct consenter reaches the same pending list, the
same threshold groups, the same term changes and therefore the same header
chain. ``ConsenterNode`` wraps it with admission, the total-order port,
signature gossip and header serving.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .config import Config
from .crypto import KeyRing, SigningKey
from .model import (ZERO_HASH, BatchAttestationShare, BlockHeader, ComplaintVote,
                    HeaderPullRequest, HeaderSignature, Transaction)
from .storage import RecordLog
from .transport import (SEQUENCER_ADDR, Address, Transport, batcher_addr, consenter_addr)
from .codec import encode_frame

log = logging.getLogger(__name__)

STALE_EPOCH = "stale_epoch"
FUTURE_EPOCH = "future_epoch"
DUPLICATE = "duplicate"
BAD_SIGNATURE = "bad_signature"
BAD_POINTER = "bad_pointer"
WRONG_PRIMARY = "wrong_primary"
STALE_TERM = "stale_term"
UNKNOWN_SHARD = "unknown_shard"


@dataclass(frozen=True, slots=True)
class PendingEntry:
    share: BatchAttestationShare
    round: int
    epoch: int


@dataclass(frozen=True, slots=True)
class TermChange:
    shard: int
    old_term: int
    new_term: int
    round: int
    complainers: tuple[int, ...]
    pending: tuple[BatchAttestationShare, ...]   # this shard's pending shares, orphans excluded


@dataclass(frozen=True)
class RoundResult:
    round: int
    epoch: int
    groups: tuple[tuple[tuple, tuple[BatchAttestationShare, ...]], ...]   # (key, shares) -> headers
    deduped: tuple[tuple, ...]            # keys that hit the threshold again for a known digest
    pruned: tuple[BatchAttestationShare, ...]
    term_changes: tuple[TermChange, ...]
    reconfigs: tuple[Transaction, ...]
    expired: tuple[BatchAttestationShare, ...] = ()


@dataclass(frozen=True)
class RoundNotice:
    """Per-round summary a consenter hands to its own party's batchers."""
    round: int
    epoch: int
    terms: tuple[int, ...]
    pending: dict               # shard -> tuple[PendingEntry, ...]
    collected: tuple[bytes, ...]     # digests that reached the threshold this round
    term_changes: tuple[TermChange, ...]


class ConsensusCore:
    def __init__(self, config: Config):
        self.config = config
        self.f = config.f
        self.pending: list[PendingEntry] = []
        self._by_id: dict[tuple, PendingEntry] = {}      # (key, signer) -> entry
        self.collected: dict[bytes, int] = {}             # digest -> epoch collected
        self.votes: dict[tuple, dict[int, None]] = {}     # (key, signer) -> pointing signers
        self.terms = [0] * config.n_shards
        self.complainers: list[dict[int, None]] = [{} for _ in range(config.n_shards)]
        self.round = -1

    def pending_shares(self) -> list[BatchAttestationShare]:
        return [e.share for e in self.pending]

    def is_pending(self, key: tuple, signer: int) -> bool:
        return (key, signer) in self._by_id

    def _admissible(self, s: BatchAttestationShare, epoch: int) -> bool:
        cfg = self.config
        b = s.batch_id
        if not 0 <= b.shard < cfg.n_shards or not 0 <= s.signer < cfg.n_parties:
            return False
        if not epoch - cfg.max_epoch_skew <= s.epoch <= epoch + 1:
            return False
        if b.primary != cfg.primary(b.shard, b.term):
            return False
        return s.pointers_well_formed() and len(s.orphan_ptrs) <= cfg.orphan_ptr_cap

    def process_round(self, epoch: int, payloads) -> RoundResult:
        self.round += 1
        rnd = self.round
        f1 = self.f + 1
        by_id = self._by_id

        # 1. P <- P u B
        accepted: list[BatchAttestationShare] = []
        complaints: list[ComplaintVote] = []
        reconfigs: list[Transaction] = []
        for m in payloads:
            if isinstance(m, BatchAttestationShare):
                if not self._admissible(m, epoch):
                    continue
                ident = (m.key, m.signer)
                if ident in by_id:
                    continue
                entry = PendingEntry(m, rnd, epoch)
                self.pending.append(entry)
                by_id[ident] = entry
                accepted.append(m)
            elif isinstance(m, ComplaintVote):
                complaints.append(m)
            elif isinstance(m, Transaction):
                reconfigs.append(m)

        # 2. count per key; groups at the threshold leave P
        counts: dict[tuple, list[PendingEntry]] = {}
        for e in self.pending:
            counts.setdefault(e.share.key, []).append(e)
        full = sorted(k for k, es in counts.items() if len(es) >= f1)
        groups, deduped = [], []
        removed: set[tuple] = set()
        for key in full:
            es = counts[key]
            for e in es:
                removed.add((key, e.share.signer))
            digest = key[3]
            if digest in self.collected:
                deduped.append(key)
                continue
            self.collected[digest] = epoch
            groups.append((key, tuple(e.share for e in es)))
        if removed:
            for ident in removed:
                del by_id[ident]

        # 3. orphan pointer votes from the shares ordered this round
        for s in accepted:
            for p in s.orphan_ptrs:
                b = p.batch_id
                target = ((b.shard, b.term, b.seq, p.digest), p.signer)
                if target in by_id:
                    self.votes.setdefault(target, {})[s.signer] = None
        pruned = []
        for target, voters in self.votes.items():
            if len(voters) >= f1 and target in by_id:
                pruned.append(by_id.pop(target).share)
                removed.add(target)
        if removed:
            self.pending = [e for e in self.pending if (e.share.key, e.share.signer) in by_id]
            self.votes = {t: v for t, v in self.votes.items() if t in by_id}

        # 4. complaints rotate terms
        term_changes = []
        n = self.config.n_parties
        for c in complaints:
            sh = c.shard
            if not 0 <= sh < len(self.terms) or not 0 <= c.signer < n:
                continue
            if c.term != self.terms[sh] or c.signer in self.complainers[sh]:
                continue
            self.complainers[sh][c.signer] = None
            if len(self.complainers[sh]) >= f1:
                who = tuple(self.complainers[sh])
                self.terms[sh] += 1
                self.complainers[sh] = {}
                snapshot = tuple(e.share for e in self.pending
                                 if e.share.batch_id.shard == sh
                                 and e.share.digest not in self.collected)
                term_changes.append(TermChange(sh, c.term, self.terms[sh], rnd, who, snapshot))

        # 5. forget digests past the epoch window, and pending shares with them:
        # a share that old could not be admitted now, and left in P it could
        # complete a group after its digest has been forgotten
        horizon = epoch - self.config.max_epoch_skew
        db = self.collected           # insertion order is collection order
        keep = self.config.collected_retain
        while len(db) > keep:
            oldest = next(iter(db))
            if db[oldest] >= horizon:
                break
            del db[oldest]
        expired = [e for e in self.pending if e.share.epoch < horizon]
        if expired:
            for e in expired:
                del by_id[(e.share.key, e.share.signer)]
            self.pending = [e for e in self.pending if e.share.epoch >= horizon]
            self.votes = {t: v for t, v in self.votes.items() if t in by_id}

        return RoundResult(rnd, epoch, tuple(groups), tuple(deduped), tuple(pruned),
                           tuple(term_changes), tuple(reconfigs), tuple(e.share for e in expired))


def process_round(core: ConsensusCore, epoch: int, payloads):
    """Functional view: returns (P', T, term_changes) after applying one round."""
    res = core.process_round(epoch, payloads)
    return core.pending_shares(), [shares for _, shares in res.groups], list(res.term_changes)


class HeaderChain:
    """Derives headers deterministically and finalizes them at a quorum of signatures."""

    def __init__(self, config: Config, keys: KeyRing, party: int, key: SigningKey):
        self.config = config
        self.keys = keys
        self.party = party
        self.key = key
        self.derived: list[BlockHeader] = []
        self.sigs: list[dict[int, bytes]] = []
        self.early: dict[int, dict[int, bytes]] = {}
        self.finalized: list[BlockHeader] = []
        self.evidence: list[tuple[int, int]] = []      # (number, party) of rejected signatures

    def derive(self, groups) -> list[HeaderSignature]:
        """Append one header per threshold group; return this party's signatures."""
        out = []
        for key, shares in groups:
            number = len(self.derived)
            prev = self.derived[-1].hash() if self.derived else ZERO_HASH
            h = BlockHeader(number, prev, shares[0].batch_id, key[3])
            self.derived.append(h)
            self.sigs.append({})
            sig = self.key.sign(h.signing_bytes())
            self.sigs[number][self.party] = sig
            out.append(HeaderSignature(number, self.party, sig))
            for party, s in self.early.pop(number, {}).items():
                self._check_and_add(number, party, s)
        return out

    def _check_and_add(self, number: int, party: int, sig: bytes) -> None:
        held = self.sigs[number]
        if party in held:
            return
        if self.keys.verify_party(party, self.derived[number].signing_bytes(), sig):
            held[party] = sig
        else:
            self.evidence.append((number, party))
            log.warning("conflicting header signature from party %d for header %d", party, number)

    def add_signature(self, hs: HeaderSignature) -> list[BlockHeader]:
        if not 0 <= hs.party < self.config.n_parties:
            return []
        if hs.number >= len(self.derived):
            self.early.setdefault(hs.number, {}).setdefault(hs.party, hs.sig)
            return []
        if hs.number >= len(self.finalized):
            self._check_and_add(hs.number, hs.party, hs.sig)
        return self._finalize()

    def _finalize(self) -> list[BlockHeader]:
        out = []
        q = self.config.quorum
        while len(self.finalized) < len(self.derived):
            n = len(self.finalized)
            held = self.sigs[n]
            if len(held) < q:
                break
            h = self.derived[n].with_sigs(held.items())
            self.finalized.append(h)
            out.append(h)
        return out

    def adopt(self, header: BlockHeader) -> list[BlockHeader]:
        """Finalize from a peer's quorum-signed copy of the next header, if it matches."""
        n = len(self.finalized)
        if header.number != n or n >= len(self.derived):
            return []
        if header.unsigned() != self.derived[n]:
            return []
        if verify_header_quorum(header, self.keys, self.config.quorum):
            for party, sig in header.sigs:
                self.sigs[n].setdefault(party, sig)
            return self._finalize()
        return []


def verify_header_quorum(header: BlockHeader, keys: KeyRing, quorum: int) -> bool:
    msg = header.signing_bytes()
    good = set()
    for party, sig in header.sigs:
        if party not in good and keys.verify_party(party, msg, sig):
            good.add(party)
    return len(good) >= quorum


@dataclass(frozen=True, slots=True)
class PortSubmit:
    payloads: tuple


@dataclass(frozen=True, slots=True)
class Round:
    number: int
    epoch: int
    payloads: tuple


@dataclass(frozen=True, slots=True)
class RoundPull:
    from_round: int


@dataclass(frozen=True, slots=True)
class HeaderSigBundle:
    sigs: tuple[HeaderSignature, ...]


@dataclass(frozen=True, slots=True)
class HeaderBundle:
    headers: tuple[BlockHeader, ...]


class HeaderSubscription:
    """Gapless cursor over a consenter's finalized headers."""

    def __init__(self, chain: HeaderChain, from_number: int):
        self._chain = chain
        self.next = from_number

    def poll(self) -> list[BlockHeader]:
        out = self._chain.finalized[self.next:]
        self.next += len(out)
        return out


class ConsenterNode:
    def __init__(self, party: int, config: Config, key: SigningKey, keys: KeyRing,
                 out: Transport, header_log: RecordLog | None = None):
        self.party = party
        self.config = config
        self.key = key
        self.keys = keys
        self.out = out
        self.addr = consenter_addr(party)
        self.core = ConsensusCore(config)
        self.chain = HeaderChain(config, keys, party, key)
        self.header_log = header_log if header_log is not None else RecordLog()
        self._outbox: list = []
        self._recent: dict[tuple, int] = {}        # admitted identity -> epoch
        self._counted: dict[tuple, int] = {}       # (key, signer) of collected groups -> epoch
        self._rounds: dict[int, Round] = {}
        self.next_round = 0
        self._last_round_at = 0
        self.subscribers: dict[Address, int] = {}
        self.reconfig_log: list[Transaction] = []
        self.term_log: list[TermChange] = []
        self.results: list[RoundResult] = []
        self.keep_results = False
        self.stats = {"pruned": 0, "expired": 0, "max_pending": 0}
        self._peer_cursor = party
        self._stall_since: int | None = None

    # -- admission -------------------------------------------------------
    def admit(self, payload, now: int) -> str | None:
        """Validate a share/complaint/reconfig tx; on success queue it for ordering."""
        cfg = self.config
        now_epoch = cfg.epoch_of(now)
        if isinstance(payload, BatchAttestationShare):
            b = payload.batch_id
            if not 0 <= b.shard < cfg.n_shards:
                return UNKNOWN_SHARD
            if not self.keys.verify_party(payload.signer, payload.signing_bytes(), payload.sig):
                return BAD_SIGNATURE
            if now_epoch - payload.epoch > cfg.max_epoch_skew:
                return STALE_EPOCH
            if payload.epoch > now_epoch + 1:
                return FUTURE_EPOCH
            if not payload.pointers_well_formed() or len(payload.orphan_ptrs) > cfg.orphan_ptr_cap:
                return BAD_POINTER
            if b.primary != cfg.primary(b.shard, b.term):
                return WRONG_PRIMARY
            ident = (payload.key, payload.signer)
            if (self.core.is_pending(*ident) or ident in self._counted
                    or ident + (payload.epoch,) in self._recent):
                return DUPLICATE
            self._recent[ident + (payload.epoch,)] = now_epoch
        elif isinstance(payload, ComplaintVote):
            if not 0 <= payload.shard < cfg.n_shards:
                return UNKNOWN_SHARD
            if not self.keys.verify_party(payload.signer, payload.signing_bytes(), payload.sig):
                return BAD_SIGNATURE
            if payload.term < self.core.terms[payload.shard]:
                return STALE_TERM
            ident = ("c", payload.shard, payload.term, payload.signer)
            if ident in self._recent:
                return DUPLICATE
            self._recent[ident] = now_epoch
        elif isinstance(payload, Transaction):
            ident = ("r", payload.tx_id)
            if ident in self._recent:
                return DUPLICATE
            self._recent[ident] = now_epoch
        else:
            raise TypeError(f"cannot admit {type(payload).__name__}")
        self._outbox.append(payload)
        return None

    def flush(self) -> None:
        if self._outbox:
            self.out.send(self.addr, SEQUENCER_ADDR, PortSubmit(tuple(self._outbox)))
            self._outbox = []

    # -- ordered rounds --------------------------------------------------
    def on_round(self, rnd: Round, now: int) -> None:
        if rnd.number < self.next_round:
            return
        self._rounds[rnd.number] = rnd
        while self.next_round in self._rounds:
            self._apply(self._rounds.pop(self.next_round), now)
            self.next_round += 1
        self._last_round_at = now
        if self._rounds:
            self.out.send(self.addr, SEQUENCER_ADDR, RoundPull(self.next_round))

    def _apply(self, rnd: Round, now: int) -> None:
        res = self.core.process_round(rnd.epoch, rnd.payloads)
        if self.keep_results:
            self.results.append(res)
        for key, shares in res.groups:
            for s in shares:
                self._counted[(key, s.signer)] = rnd.epoch
        self.reconfig_log.extend(res.reconfigs)
        self.term_log.extend(res.term_changes)
        st = self.stats
        st["pruned"] += len(res.pruned)
        st["expired"] += len(res.expired)
        st["max_pending"] = max(st["max_pending"], len(self.core.pending))
        sigs = self.chain.derive(res.groups)
        if sigs:
            bundle = HeaderSigBundle(tuple(sigs))
            for p in range(self.config.n_parties):
                if p != self.party:
                    self.out.send(self.addr, consenter_addr(p), bundle)
            self._publish(self.chain._finalize())
        self._gc(rnd.epoch)
        self._notify_batchers(res)

    def _notify_batchers(self, res: RoundResult) -> None:
        by_shard: dict[int, list[PendingEntry]] = {s: [] for s in range(self.config.n_shards)}
        for e in self.core.pending:
            by_shard[e.share.batch_id.shard].append(e)
        notice = RoundNotice(res.round, res.epoch, tuple(self.core.terms),
                             {s: tuple(v) for s, v in by_shard.items()},
                             tuple(key[3] for key, _ in res.groups)
                             + tuple(key[3] for key in res.deduped), res.term_changes)
        for s in range(self.config.n_shards):
            self.out.send(self.addr, batcher_addr(self.party, s), notice)

    def _gc(self, epoch: int) -> None:
        horizon = epoch - self.config.max_epoch_skew - 1
        if len(self._recent) > 1024:
            self._recent = {k: e for k, e in self._recent.items() if e >= horizon}
        if len(self._counted) > 1024:
            self._counted = {k: e for k, e in self._counted.items() if e >= horizon}

    # -- headers -----------------------------------------------------------
    def _publish(self, headers: list[BlockHeader]) -> None:
        if not headers:
            return
        for h in headers:
            self.header_log.append(encode_frame(h))
        for dst, nxt in list(self.subscribers.items()):
            self._serve_headers(dst, nxt)

    def _serve_headers(self, dst: Address, start: int, subscribe: bool = True) -> None:
        fin = self.chain.finalized
        if start < len(fin):
            self.out.send(self.addr, dst, HeaderBundle(tuple(fin[start:])))
        if subscribe:
            self.subscribers[dst] = max(start, len(fin))

    def header_stream(self, from_number: int = 0) -> HeaderSubscription:
        return HeaderSubscription(self.chain, from_number)

    # -- transport glue ------------------------------------------------------
    def on_message(self, src: Address, msg, now: int) -> None:
        if isinstance(msg, (BatchAttestationShare, ComplaintVote, Transaction)):
            self.admit(msg, now)
        elif isinstance(msg, Round):
            self.on_round(msg, now)
        elif isinstance(msg, HeaderSigBundle):
            fin = []
            for hs in msg.sigs:
                fin.extend(self.chain.add_signature(hs))
            self._publish(fin)
        elif isinstance(msg, HeaderSignature):
            self._publish(self.chain.add_signature(msg))
        elif isinstance(msg, HeaderPullRequest):
            self._serve_headers(src, msg.from_number, msg.subscribe)
        elif isinstance(msg, HeaderBundle):
            fin = []
            for h in msg.headers:
                fin.extend(self.chain.adopt(h))
            self._publish(fin)

    def tick(self, now: int) -> None:
        self.flush()
        cfg = self.config
        if now - self._last_round_at >= 10 * cfg.round_interval:
            self._last_round_at = now
            self.out.send(self.addr, SEQUENCER_ADDR, RoundPull(self.next_round))
        if len(self.chain.finalized) < len(self.chain.derived):
            if self._stall_since is None:
                self._stall_since = now
            elif now - self._stall_since >= 2 * cfg.pull_timeout:
                self._stall_since = now
                self._peer_cursor = (self._peer_cursor + 1) % cfg.n_parties
                if self._peer_cursor == self.party:
                    self._peer_cursor = (self._peer_cursor + 1) % cfg.n_parties
                self.out.send(self.addr, consenter_addr(self._peer_cursor),
                              HeaderPullRequest(len(self.chain.finalized), False))
                # re-announce our own signatures for headers others may lack
                sigs = tuple(HeaderSignature(n, self.party, self.chain.sigs[n][self.party])
                             for n in range(len(self.chain.finalized), len(self.chain.derived)))
                if sigs:
                    bundle = HeaderSigBundle(sigs)
                    for p in range(cfg.n_parties):
                        if p != self.party:
                            self.out.send(self.addr, consenter_addr(p), bundle)
        else:
            self._stall_since = None
