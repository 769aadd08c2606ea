"""
Racing the schemes to a target loss gap
=======================================

Same ten devices, same fading draws, same mini-batches: only the way
each round is planned differs. Metrics land in $FEELSIM_OUTPUT_DIR
(default ./feelsim-out) as one CSV per run.
"""
import sys

from feelsim.experiment import emit_report, output_dir, run_experiment
from feelsim.fixtures import standard_config

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
out = output_dir() / "race"

print(f"{'scheme':<20} {'rounds':>6} {'time to eps (s)':>16} {'mean ratio':>11}")
for scheme in ("jcdo", "co", "do", "fedtoe", "fixed-r", "fedavg"):
    result = run_experiment(standard_config(scheme, seed))
    emit_report(result, out)
    s = result.summary
    t = f"{s['time_to_epsilon']:.4f}" if s["reached"] else "not reached"
    mean_r = sum(r.mean_ratio for r in result.rows) / max(len(result.rows), 1)
    print(f"{scheme:<20} {s['rounds']:>6} {t:>16} {mean_r:>11.3f}")
print(f"\nper-round CSVs in {out}")
