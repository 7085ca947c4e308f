import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from arma.cli import load_config, main

TINY = '''format = "arma-scenario/1"
name = "tiny"
seed = 5
duration_ms = 5000
[config]
n_parties = 4
f = 1
n_shards = 2
[clients]
tx_count = 60
rate = 600
'''

STALLED = '''format = "arma-scenario/1"
name = "stalled"
seed = 5
duration_ms = 1500
negative = true
[config]
n_parties = 4
f = 1
[clients]
tx_count = 20
[[faults]]
party = 1
kind = "crash"
[[faults]]
party = 2
kind = "crash"
'''


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    (base / "tiny.scenario").write_text(TINY)
    (base / "stalled.scenario").write_text(STALLED)
    (base / "broken.scenario").write_text('format = "arma-scenario/1"\nseed = = 1\n')
    assert main(["run", "--scenario", str(base / "tiny.scenario"), "--out", str(base / "out")]) == 0
    return base


def matrix(b):
    good = b / "out" / "ledger-p0.bin"
    keys = b / "out" / "keys"
    data = good.read_bytes()
    (b / "flipped.bin").write_bytes(data[:40] + bytes([data[40] ^ 0xFF]) + data[41:])
    (b / "torn.bin").write_bytes(data[:-3])
    return [
        ([], 2),
        (["launch"], 2),
        (["run", "--scenario", str(b / "tiny.scenario")], 2),
        (["run", "--scenario", str(b / "missing.scenario"), "--out", str(b / "x")], 2),
        (["run", "--scenario", str(b / "broken.scenario"), "--out", str(b / "x")], 2),
        (["run", "--scenario", str(b / "tiny.scenario"), "--seed", "-1", "--out", str(b / "x")], 2),
        (["run", "--scenario", str(b / "tiny.scenario"), "--seed", str(1 << 64), "--out", str(b / "x")], 2),
        (["run", "--scenario", str(b / "tiny.scenario"), "--seed", "9", "--out", str(b / "seeded")], 0),
        (["run", "--scenario", str(b / "stalled.scenario"), "--out", str(b / "stalled")], 1),
        (["gen-config", "--parties", "7", "--shards", "2", "--faults", "2", "--out", str(b / "cfg")], 0),
        (["gen-config", "--parties", "6", "--shards", "2", "--faults", "2", "--out", str(b / "cfg2")], 2),
        (["gen-config", "--parties", "4", "--shards", "1", "--out", str(b / "cfg3")], 2),
        (["gen-config", "--parties", "4", "--shards", "1", "--faults", "1", "--scheme", "rsa",
          "--out", str(b / "cfg4")], 2),
        (["verify-ledger", "--ledger", str(good), "--keys", str(keys)], 0),
        (["verify-ledger", "--ledger", str(b / "torn.bin"), "--keys", str(keys)], 0),
        (["verify-ledger", "--ledger", str(b / "flipped.bin"), "--keys", str(keys)], 1),
        (["verify-ledger", "--ledger", str(good), "--keys", str(b / "cfg" / "keys")], 1),
        (["verify-ledger", "--ledger", str(b / "nope.bin"), "--keys", str(keys)], 2),
        (["verify-ledger", "--ledger", str(good), "--keys", str(b / "nokeys")], 2),
        (["verify-ledger", "--ledger", str(good)], 2),
        (["stats", "--report", str(b / "out")], 0),
        (["stats", "--report", str(b / "nothing")], 2),
    ]


def code(argv):
    try:
        return main(argv)
    except SystemExit as e:
        return e.code


def test_exit_code_matrix(runs, capsys):
    for argv, want in matrix(runs):
        assert code(argv) == want, argv
    capsys.readouterr()


def test_outputs(runs, capsys):
    b = runs
    main(["verify-ledger", "--ledger", str(b / "out" / "ledger-p1.bin"), "--keys", str(b / "out" / "keys")])
    assert capsys.readouterr().out.startswith("PASS ")
    data = (b / "out" / "ledger-p1.bin").read_bytes()
    (b / "f2.bin").write_bytes(data[:-1] + bytes([data[-1] ^ 1]))
    main(["verify-ledger", "--ledger", str(b / "f2.bin"), "--keys", str(b / "out" / "keys")])
    assert capsys.readouterr().out.startswith("FAIL at offset ")
    main(["stats", "--report", str(b / "out")])
    rows = capsys.readouterr().out.strip().splitlines()
    assert len(rows) == 5 and rows[0].split()[0] == "assembler"


def test_gen_config_artifacts(tmp_path):
    assert main(["gen-config", "--parties", "4", "--shards", "3", "--faults", "1",
                 "--seed", "7", "--scheme", "hmac", "--out", str(tmp_path)]) == 0
    cfg = load_config(tmp_path / "config.toml")
    assert (cfg.n_parties, cfg.n_shards, cfg.f, cfg.sig_scheme) == (4, 3, 1, "hmac")
    assert sorted(p.name for p in (tmp_path / "keys").iterdir()) == [
        "party-0.secret", "party-1.secret", "party-2.secret", "party-3.secret", "public.json"]


def test_runs_are_reproducible(runs):
    b = runs
    main(["run", "--scenario", str(b / "tiny.scenario"), "--out", str(b / "again")])
    assert (b / "again" / "report.json").read_bytes() == (b / "out" / "report.json").read_bytes()


@pytest.mark.skipif(shutil.which("arma") is None, reason="console script not installed")
def test_console_script(runs):
    res = subprocess.run(["arma", "stats", "--report", str(runs / "out")], capture_output=True, text=True)
    assert res.returncode == 0
    res = subprocess.run([sys.executable, "-m", "arma.cli"], capture_output=True, text=True)
    assert res.returncode == 2
