"""Mitigations: a sliding-window engine, detection restarts, and weird-event sampling."""

from dpdlab import CellSpec, load_config, run_cell
from dpdlab.engines import RingEngineConfig
from dpdlab.config import default_config

# The ring engine keeps only the last window of each direction but restarts
# matching at every line start, so stuffing length stops mattering.
for reps in (0, 512, 10_000, 200_000):
    cell = CellSpec("ring", {"name": "crlf", "repetitions": reps}, 4242, "nginx")
    print(f"ring, {reps:>7} CRLF: {run_cell(cell).label}")

# Restarting detection after an analyzer fails undoes the HELO trick.
sigs = default_config().signatures
for restart in (True, False):
    cfg = RingEngineConfig(restart_on_violation=restart, signatures=sigs)
    o = run_cell(CellSpec(cfg, {"name": "helo"}, 4242, "nginx"))
    print(f"restart_on_violation={restart}: {o.label} (verdict {o.verdict.protocol})")

# Without sampling, every empty request line is a weird event.
spec = CellSpec("tree", {"name": "crlf", "repetitions": 1000}, 80, "nginx")
off = run_cell(spec)
on = run_cell(spec, load_config({"sampler": {"enabled": True}}))
print(f"weirds for 1000 CRLF: sampling off {off.dos_indicator}, on {on.dos_indicator}")
