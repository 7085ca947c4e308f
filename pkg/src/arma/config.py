"""Protocol configuration and quorum arithmetic."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

MS = 1_000  # logical time is integer microseconds


class ConfigError(ValueError):
    pass


def quorum_size(n: int, f: int) -> int:
    """Smallest q with 2q - n >= f + 1, i.e. two quorums share a correct party."""
    q = -(-(n + f + 1) // 2)
    if q > n - f:
        raise ConfigError(f"no quorum exists for n={n}, f={f}")
    return q


def primary_party(shard: int, term: int, n_parties: int) -> int:
    return (shard + term) % n_parties


@dataclass(frozen=True)
class Config:
    n_parties: int = 4
    f: int = 1
    n_shards: int = 1
    batch_max_txs: int = 100
    batch_max_bytes: int = 1 << 20
    batch_timeout: int = 20 * MS
    sample_size: int = 10
    forward_timeout: int = 300 * MS
    complaint_timeout: int = 600 * MS
    epoch_length: int = 500 * MS
    max_epoch_skew: int = 4
    orphan_ptr_cap: int = 8
    collected_retain: int = 65_536     # collected digests kept regardless of age
    max_tx_bytes: int = 64 * 1024
    max_pool_txs: int = 1_000_000
    max_frame_bytes: int = 64 << 20
    check_client_sigs: bool = True
    sig_scheme: str = "ed25519"
    # total-order port (simulated sequencer)
    round_interval: int = 10 * MS
    round_cap: int = 10_000
    # batcher transport
    pull_timeout: int = 40 * MS
    pull_window: int = 16
    seen_ttl_epochs: int = 20
    max_resubmits: int = 3
    tick: int = 10 * MS

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.f < 0:
            raise ConfigError("f must be non-negative")
        if self.n_parties < 3 * self.f + 1:
            raise ConfigError(f"n_parties={self.n_parties} < 3f+1={3 * self.f + 1}")
        if self.n_shards < 1:
            raise ConfigError("n_shards must be >= 1")
        if self.batch_max_txs < 1 or self.batch_max_bytes < 1:
            raise ConfigError("batch limits must be positive")
        if not 1 <= self.sample_size <= self.batch_max_txs:
            raise ConfigError("sample_size must be in [1, batch_max_txs]")
        if self.complaint_timeout <= self.forward_timeout:
            raise ConfigError("complaint_timeout must exceed forward_timeout")
        if self.forward_timeout < 4:
            raise ConfigError("forward_timeout too small")
        if self.collected_retain < 0:
            raise ConfigError("collected_retain must be non-negative")
        if self.epoch_length <= 0 or self.max_epoch_skew < 1:
            raise ConfigError("epoch_length and max_epoch_skew must be positive")
        if self.sig_scheme not in ("ed25519", "hmac"):
            raise ConfigError(f"unknown sig_scheme {self.sig_scheme!r}")
        if self.round_interval <= 0 or self.round_cap < 1 or self.tick <= 0:
            raise ConfigError("round_interval, round_cap and tick must be positive")
        if self.pull_window < 1 or self.pull_timeout <= 0:
            raise ConfigError("pull settings must be positive")
        quorum_size(self.n_parties, self.f)

    @property
    def quorum(self) -> int:
        return quorum_size(self.n_parties, self.f)

    @property
    def threshold(self) -> int:
        """Shares (or complaints) needed so that at least one correct party is included."""
        return self.f + 1

    @property
    def bucket_width(self) -> int:
        return self.forward_timeout // 4

    @property
    def pending_bound(self) -> int:
        """Upper bound on consenter pending shares.

        A pending share expires once its epoch falls more than max_epoch_skew
        behind, and was ordered no earlier than one epoch before its own, so
        it sits in one of the last max_epoch_skew + 2 epochs of rounds.
        """
        rounds_per_epoch = -(-self.epoch_length // self.round_interval) + 1
        return self.round_cap * rounds_per_epoch * (self.max_epoch_skew + 2)

    def epoch_of(self, now: int) -> int:
        return now // self.epoch_length

    def primary(self, shard: int, term: int) -> int:
        return primary_party(shard, term, self.n_parties)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def with_(self, **changes) -> "Config":
        return replace(self, **changes)
