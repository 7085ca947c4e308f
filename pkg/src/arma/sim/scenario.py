"""Scenario description and its TOML file format (``format = "arma-scenario/1"``).

Times in the file are milliseconds (keys ending in ``_ms``); internally all
times are integer microseconds. Config time fields may be given either as
``<field>_ms`` or raw microseconds under the field name.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..config import MS, Config, ConfigError
from .net import DropRule, NetModel, Partition

FORMAT = "arma-scenario/1"
FAULT_KINDS = ("crash", "censor", "bogus_primary", "silent_primary", "equivocate_shares",
               "stale_epoch_replayer")
ROLES = ("party", "router", "batcher", "consenter", "assembler")
CHECKS = ("agreement", "no_dup", "censorship", "liveness")
DEFAULT_CHECKS = ("agreement", "no_dup", "liveness")
FOREVER = 1 << 62


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        where = f" (line {line}, column {col})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Burst:
    at: int
    count: int


@dataclass
class ClientPlan:
    tx_count: int = 100
    tx_size: int = 64
    rate: float = 1000.0             # tx/s, spread evenly (or Poisson)
    arrival: str = "uniform"         # uniform | poisson
    start: int = 0
    bursts: list[Burst] = field(default_factory=list)
    submit_to: tuple[int, ...] | None = None    # None: every party's router
    resend_after: int = 3000 * MS
    max_resends: int = 3
    invalid_every: int = 0           # every n-th tx carries a bad client signature

    @property
    def total(self) -> int:
        return self.tx_count + sum(b.count for b in self.bursts)


@dataclass(frozen=True)
class FaultSpec:
    party: int
    kind: str
    role: str = "party"
    shard: int | None = None
    at: int = 0                      # crash time
    window: tuple[int, int] = (0, FOREVER)
    predicate: str = "all"           # censor: all | even
    invalid: int = 1                 # bogus_primary: K invalid txs ...
    per: int = 10                    # ... per M txs

    def active(self, now: int) -> bool:
        return self.window[0] <= now < self.window[1]


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 0
    config: Config = field(default_factory=lambda: Config(sig_scheme="hmac"))
    duration: int = 10_000 * MS
    clients: ClientPlan = field(default_factory=ClientPlan)
    net: NetModel = field(default_factory=NetModel)
    faults: list[FaultSpec] = field(default_factory=list)
    negative: bool = False
    checks: tuple[str, ...] = DEFAULT_CHECKS
    track_pending: bool = False

    def faulted_parties(self) -> list[int]:
        return sorted({f.party for f in self.faults})

    def validate(self) -> None:
        cfg = self.config
        for fs in self.faults:
            if fs.kind not in FAULT_KINDS:
                raise ScenarioError(f"unknown fault kind {fs.kind!r}")
            if fs.role not in ROLES:
                raise ScenarioError(f"unknown fault role {fs.role!r}")
            if not 0 <= fs.party < cfg.n_parties:
                raise ScenarioError(f"fault targets party {fs.party} outside 0..{cfg.n_parties - 1}")
            if fs.shard is not None and not 0 <= fs.shard < cfg.n_shards:
                raise ScenarioError(f"fault targets shard {fs.shard} outside 0..{cfg.n_shards - 1}")
            if fs.kind == "bogus_primary" and not 0 < fs.invalid <= fs.per:
                raise ScenarioError("bogus_primary needs 0 < invalid <= per")
            if fs.kind == "censor" and fs.predicate not in ("all", "even"):
                raise ScenarioError(f"unknown censor predicate {fs.predicate!r}")
        if len(self.faulted_parties()) > cfg.f and not self.negative:
            raise ScenarioError(f"{len(self.faulted_parties())} faulted parties exceed the "
                                f"fault budget f={cfg.f} (mark the scenario negative to allow)")
        for c in self.checks:
            if c not in CHECKS:
                raise ScenarioError(f"unknown check {c!r}")
        if self.duration <= 0:
            raise ScenarioError("duration must be positive")
        if self.clients.tx_size < 16:
            raise ScenarioError("tx_size must be at least 16 bytes")
        if self.clients.submit_to is not None:
            for p in self.clients.submit_to:
                if not 0 <= p < cfg.n_parties:
                    raise ScenarioError(f"submit_to party {p} out of range")


_TIME_FIELDS = {f.name for f in fields(Config)
                if f.name.endswith(("_timeout", "_length", "_interval")) or f.name == "tick"}


def _ms(table: dict, key: str, default: int) -> int:
    if key + "_ms" in table:
        return int(round(float(table[key + "_ms"]) * MS))
    return int(table.get(key, default))


def _take(table: dict, allowed: set[str], where: str) -> None:
    extra = set(table) - allowed
    if extra:
        raise ScenarioError(f"unknown keys in {where}: {sorted(extra)}")


def config_from_table(t: dict) -> Config:
    data = {}
    for k, v in t.items():
        if k.endswith("_ms") and k[:-3] in _TIME_FIELDS:
            data[k[:-3]] = int(round(float(v) * MS))
        else:
            data[k] = v
    data.setdefault("sig_scheme", "hmac")
    try:
        return Config.from_dict(data)
    except (ConfigError, TypeError) as exc:
        raise ScenarioError(f"config: {exc}") from None


def scenario_from_dict(d: dict) -> Scenario:
    if d.get("format") != FORMAT:
        raise ScenarioError(f"missing or unsupported format tag (expected format = \"{FORMAT}\")")
    _take(d, {"format", "name", "seed", "duration_ms", "config", "clients", "net", "faults",
              "negative", "checks", "track_pending"}, "scenario")
    try:
        cfg = config_from_table(d.get("config", {}))
        c = d.get("clients", {})
        _take(c, {"tx_count", "tx_size", "rate", "arrival", "start_ms", "bursts", "submit_to",
                  "resend_after_ms", "max_resends", "invalid_every"}, "clients")
        clients = ClientPlan(
            tx_count=int(c.get("tx_count", 100)), tx_size=int(c.get("tx_size", 64)),
            rate=float(c.get("rate", 1000.0)), arrival=str(c.get("arrival", "uniform")),
            start=_ms(c, "start", 0),
            bursts=[Burst(_ms(b, "at", 0), int(b["count"])) for b in c.get("bursts", [])],
            submit_to=tuple(c["submit_to"]) if "submit_to" in c else None,
            resend_after=_ms(c, "resend_after", 3000 * MS),
            max_resends=int(c.get("max_resends", 3)),
            invalid_every=int(c.get("invalid_every", 0)))
        if clients.arrival not in ("uniform", "poisson"):
            raise ScenarioError(f"unknown arrival process {clients.arrival!r}")
        n = d.get("net", {})
        _take(n, {"delays_ms", "intra_party_ms", "jitter_ms", "drop_rate", "partitions",
                  "drop_rules"}, "net")
        net = NetModel(
            delays_ms=tuple(int(x) for x in n.get("delays_ms", (10, 17, 20))),
            intra_party=_ms(n, "intra_party", 200), jitter=_ms(n, "jitter", 1 * MS),
            drop_rate=float(n.get("drop_rate", 0.0)),
            partitions=[Partition(_ms(p, "start", 0), _ms(p, "end", FOREVER),
                                  tuple(p["isolate"])) for p in n.get("partitions", [])],
            drop_rules=[DropRule(r.get("kind"), r.get("src_party"), r.get("dst_party"),
                                 r.get("src_role"), r.get("dst_role"), _ms(r, "start", 0),
                                 _ms(r, "end", FOREVER)) for r in n.get("drop_rules", [])])
        faults = []
        for fd in d.get("faults", []):
            _take(fd, {"party", "kind", "role", "shard", "at_ms", "window_ms", "predicate",
                       "invalid", "per"}, "faults")
            w = fd.get("window_ms")
            faults.append(FaultSpec(
                party=int(fd["party"]), kind=str(fd["kind"]), role=str(fd.get("role", "party")),
                shard=fd.get("shard"), at=_ms(fd, "at", 0),
                window=(int(w[0] * MS), int(w[1] * MS)) if w else (0, FOREVER),
                predicate=str(fd.get("predicate", "all")), invalid=int(fd.get("invalid", 1)),
                per=int(fd.get("per", 10))))
        sc = Scenario(name=str(d.get("name", "scenario")), seed=int(d.get("seed", 0)),
                      config=cfg, duration=_ms(d, "duration", 10_000 * MS), clients=clients,
                      net=net, faults=faults, negative=bool(d.get("negative", False)),
                      checks=tuple(d.get("checks", DEFAULT_CHECKS)),
                      track_pending=bool(d.get("track_pending", False)))
    except KeyError as exc:
        raise ScenarioError(f"missing required key {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"bad value: {exc}") from None
    sc.validate()
    return sc


def loads(text: str) -> Scenario:
    try:
        d = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"parse error: {exc}", getattr(exc, "lineno", None),
                            getattr(exc, "colno", None)) from None
    return scenario_from_dict(d)


def load(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{ " + ", ".join(f"{k} = {_toml_value(x)}" for k, x in v.items()) + " }"
    raise TypeError(type(v).__name__)


def dumps(sc: Scenario) -> str:
    """Serialize back to the file format (times written in milliseconds)."""
    out = [f'format = "{FORMAT}"', f"name = {_toml_value(sc.name)}", f"seed = {sc.seed}",
           f"duration_ms = {sc.duration / MS:g}", f"negative = {_toml_value(sc.negative)}",
           f"checks = {_toml_value(list(sc.checks))}", "", "[config]"]
    for k, v in sc.config.to_dict().items():
        if k in _TIME_FIELDS:
            out.append(f"{k}_ms = {v / MS:g}")
        else:
            out.append(f"{k} = {_toml_value(v)}")
    c = sc.clients
    out += ["", "[clients]", f"tx_count = {c.tx_count}", f"tx_size = {c.tx_size}",
            f"rate = {c.rate!r}", f"arrival = {_toml_value(c.arrival)}",
            f"start_ms = {c.start / MS:g}", f"resend_after_ms = {c.resend_after / MS:g}",
            f"max_resends = {c.max_resends}", f"invalid_every = {c.invalid_every}",
            "bursts = " + _toml_value([{"at_ms": b.at / MS, "count": b.count} for b in c.bursts])]
    if c.submit_to is not None:
        out.append(f"submit_to = {_toml_value(list(c.submit_to))}")
    n = sc.net
    out += ["", "[net]", f"delays_ms = {_toml_value(list(n.delays_ms))}",
            f"intra_party_ms = {n.intra_party / MS:g}", f"jitter_ms = {n.jitter / MS:g}",
            f"drop_rate = {n.drop_rate!r}",
            "partitions = " + _toml_value([{"start_ms": p.start / MS, "end_ms": p.end / MS,
                                             "isolate": list(p.isolate)} for p in n.partitions])]
    rules = []
    for r in n.drop_rules:
        d = {k: getattr(r, k) for k in ("kind", "src_party", "dst_party", "src_role", "dst_role")
             if getattr(r, k) is not None}
        d["start_ms"] = r.start / MS
        if r.end != FOREVER:
            d["end_ms"] = r.end / MS
        rules.append(d)
    out.append("drop_rules = " + _toml_value(rules))
    for fs in sc.faults:
        out += ["", "[[faults]]", f"party = {fs.party}", f"kind = {_toml_value(fs.kind)}",
                f"role = {_toml_value(fs.role)}", f"at_ms = {fs.at / MS:g}",
                f"predicate = {_toml_value(fs.predicate)}", f"invalid = {fs.invalid}",
                f"per = {fs.per}"]
        if fs.shard is not None:
            out.append(f"shard = {fs.shard}")
        if fs.window != (0, FOREVER):
            out.append(f"window_ms = [{fs.window[0] / MS:g}, {fs.window[1] / MS:g}]")
    return "\n".join(out) + "\n"
