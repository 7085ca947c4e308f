"""Command-line entry points.

Exit codes: 0 success, 1 a check or verification failed, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .assembler import verify_ledger
from .config import Config, ConfigError, quorum_size
from .crypto import deterministic_keys, load_public, write_keys

CONFIG_FORMAT = "arma-config/1"

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("must fit in 64 unsigned bits")
    return v


def cmd_run(args) -> int:
    from .sim.run import run
    from .sim.scenario import ScenarioError, load
    try:
        sc = load(args.scenario)
    except FileNotFoundError:
        print(f"error: no such scenario file: {args.scenario}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"error: {args.scenario}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None:
        sc.seed = args.seed
    report = run(sc)
    out = report.write(args.out)
    d = report.data
    for name, c in sorted(d["checks"].items()):
        if c["required"]:
            print(f"{'PASS' if c['passed'] else 'FAIL'} {name}: {c['detail']}")
    if d["violation"]:
        print(f"FAIL invariant: {d['violation']['message']}")
    print(f"committed {d['committed_txs']}/{d['valid_txs']} txs, "
          f"{d['throughput_tps']} tx/s, report in {out}")
    return EXIT_OK if report.passed else EXIT_FAIL


def config_toml(cfg: Config) -> str:
    lines = [f'format = "{CONFIG_FORMAT}"', "", "[config]"]
    for k, v in cfg.to_dict().items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, str):
            v = f'"{v}"'
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path) -> Config:
    from .sim.scenario import tomllib
    doc = tomllib.loads(Path(path).read_text())
    if doc.get("format") != CONFIG_FORMAT:
        raise ConfigError(f"expected format = \"{CONFIG_FORMAT}\"")
    return Config.from_dict(doc.get("config", {}))


def cmd_gen_config(args) -> int:
    try:
        cfg = Config(n_parties=args.parties, f=args.faults, n_shards=args.shards,
                     sig_scheme=args.scheme)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(config_toml(cfg))
    party_keys, _, ring = deterministic_keys(args.seed, cfg.n_parties, cfg.sig_scheme)
    write_keys(out / "keys", party_keys, ring, cfg.f)
    print(f"parties={cfg.n_parties} shards={cfg.n_shards} faults={cfg.f} quorum={cfg.quorum} "
          f"-> {out}")
    return EXIT_OK


def cmd_verify_ledger(args) -> int:
    ledger, keys = Path(args.ledger), Path(args.keys)
    if not ledger.is_file():
        print(f"error: no such ledger file: {ledger}", file=sys.stderr)
        return EXIT_USAGE
    try:
        ring, f = load_public(keys)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot load keys from {keys}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    n = len(ring.parties)
    if f is None:
        f = (n - 1) // 3
    res = verify_ledger(ledger.read_bytes(), ring, quorum_size(n, f))
    if not res.ok:
        print(f"FAIL at offset {res.offset} (block {res.index}): {res.reason}")
        return EXIT_FAIL
    note = f" (torn final record at offset {res.truncated_at} truncated)" if res.truncated_at is not None else ""
    print(f"PASS {res.height} blocks verified{note}")
    return EXIT_OK


def cmd_stats(args) -> int:
    path = Path(args.report) / "report.json"
    if not path.is_file():
        print(f"error: no report at {path}", file=sys.stderr)
        return EXIT_USAGE
    d = json.loads(path.read_text())
    print(f"{'assembler':>9} {'height':>7} {'txs':>8} {'tx/s':>10} {'p50_ms':>9} {'p95_ms':>9} "
          f"{'p99_ms':>9}")
    for a in d.get("assemblers", []):
        mark = "" if a.get("correct", True) else "*"
        print(f"{str(a['party']) + mark:>9} {a['height']:>7} {a['txs']:>8} "
              f"{a.get('tps', 0.0):>10.1f} {a.get('p50_ms', 0.0):>9.3f} "
              f"{a.get('p95_ms', 0.0):>9.3f} {a.get('p99_ms', 0.0):>9.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="arma", description="Simulate and inspect a sharded BFT ordering service.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a scenario and write its report")
    r.add_argument("--scenario", required=True, metavar="FILE")
    r.add_argument("--seed", type=_u64, default=None, metavar="U64",
                   help="override the scenario's seed")
    r.add_argument("--out", required=True, metavar="DIR")
    r.set_defaults(fn=cmd_run)

    g = sub.add_parser("gen-config", help="write a config and deterministic test keys")
    g.add_argument("--parties", type=int, required=True, metavar="N")
    g.add_argument("--shards", type=int, required=True, metavar="K")
    g.add_argument("--faults", type=int, required=True, metavar="F")
    g.add_argument("--out", required=True, metavar="DIR")
    g.add_argument("--seed", type=_u64, default=0, metavar="U64")
    g.add_argument("--scheme", choices=("ed25519", "hmac"), default="ed25519")
    g.set_defaults(fn=cmd_gen_config)

    v = sub.add_parser("verify-ledger", help="re-verify a block ledger offline")
    v.add_argument("--ledger", required=True, metavar="FILE")
    v.add_argument("--keys", required=True, metavar="DIR")
    v.set_defaults(fn=cmd_verify_ledger)

    s = sub.add_parser("stats", help="throughput and latency per assembler")
    s.add_argument("--report", required=True, metavar="DIR")
    s.set_defaults(fn=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
