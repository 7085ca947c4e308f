"""
Auditing a block ledger offline
===============================

Run a small scenario, write its artifacts, then re-check one assembler
ledger from disk using only the published keys. Afterwards flip one byte
and watch the verifier point at the damaged record.
"""
# %%
import tempfile
from pathlib import Path

from arma.assembler import verify_ledger
from arma.config import Config
from arma.crypto import KeyRing
from arma.sim import load, run

scenarios = Path(__file__).resolve().parent.parent / "scenarios"
report = run(load(scenarios / "censor-chain-n4.scenario"))
out = report.write(Path(tempfile.mkdtemp()) / "run")
print(sorted(p.name for p in out.iterdir()))

# %%
ring = KeyRing.from_json((out / "keys" / "public.json").read_text())
quorum = Config(**report.data["config"]).quorum
blob = (out / "ledger-p1.bin").read_bytes()
res = verify_ledger(blob, ring, quorum)
print(f"{len(blob)} bytes, {res.height} blocks, ok={res.ok}")

# %%
pos = len(blob) // 2
damaged = blob[:pos] + bytes([blob[pos] ^ 0x01]) + blob[pos + 1:]
res = verify_ledger(damaged, ring, quorum)
print(f"flipped byte {pos}: ok={res.ok}, record {res.index} at offset {res.offset}: {res.reason}")
