"""
Rotating away from censoring primaries
======================================

Shard 0 starts with a primary that drops every transaction it is sent.
Secondaries notice their forwarded transactions never appear in a batch,
complain, and once F+1 distinct complaints are ordered the term advances.
"""
# %%
from pathlib import Path

from arma.config import MS
from arma.sim import Simulation, load

scenarios = Path(__file__).resolve().parent.parent / "scenarios"
sim = Simulation(load(scenarios / "censor-chain-n7.scenario"))
report = sim.run()
d = report.data
print(f"N={sim.config.n_parties} F={sim.config.f}  passed={report.passed}")

# %%
# Each rotation names who complained. With F=2 there are two censoring
# terms in a row, so shard 0 ends up on its third primary.
for tc in d["term_changes"]:
    print(f"shard {tc['shard']}: term {tc['old_term']} -> {tc['new_term']} "
          f"at round {tc['round']}, complainers {tc['complainers']}")

# %%
# Every tx that reached N-F routers still commits inside the computed bound.
acked = d["acked"]
print(f"{acked['count']} acknowledged txs, {acked['uncommitted']} uncommitted")
print(f"slowest {acked['max_latency_us'] / MS:.0f} ms vs bound {d['t_max_us'] / MS:.0f} ms")
