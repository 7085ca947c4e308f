"""
What happens to the last batch of a crashed primary
===================================================

Party 0 seals one batch b on shard 0 and crashes. Whether b survives, and
whether its txs get committed twice, depends on two things: did the next
primary receive b (A), and did b collect F+1 attestation shares (B).
"""
# %%
from pathlib import Path

from arma.sim import Simulation, load

scenarios = Path(__file__).resolve().parent.parent / "scenarios"
cases = ["AB", "notA-B", "A-notB", "notA-notB-a", "notA-notB-b"]

# %%
for case in cases:
    sim = Simulation(load(scenarios / f"failover-{case}.scenario"))
    d = sim.run().data
    b = sim.batchers[(0, 0)].ledger.get(0, 0)
    ref = sim.assemblers[sim.ref].ledger.blocks
    where = [str(blk.header.batch_id) for blk in ref if blk.header.digest == b.digest]
    holders = [p for p in range(sim.config.n_parties)
               if sim.batchers[(p, 0)].ledger.by_digest(b.digest) is not None]
    kinds = sorted({x["attribution"] for x in d["duplicates"]})
    print(f"{case:12s} held by {holders}, committed as {where or 'never'}, "
          f"{len(d['duplicates'])} duplicate txs {kinds}")

# %%
# Only notA-B produces duplicates: b is ordered from party 0's shares, but the
# new primary never had it and re-batches the same txs from its own pool.
