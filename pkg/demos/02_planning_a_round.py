"""
Planning one round: ratios versus deadline
==========================================

A longer deadline lets every device send more coordinates and miss the
deadline less often, but every round then costs more wall-clock time.
The planner alternates a closed-form ratio per device with a bisection
on the shared deadline.
"""
import warnings

import numpy as np

from feelsim.channel import LinkBudget, PopulationSpec, compute_time, dbm_to_watts, make_population
from feelsim.errors import DeadlineCapWarning
from feelsim.optimizer import OptimizerState, baseline_plan, optimal_ratio, transmission_plan

rng = np.random.default_rng(1)
link = LinkBudget(bandwidth=1e6, noise_psd=dbm_to_watts(-174.0))
spec = PopulationSpec(tx_power=dbm_to_watts(18.0), cpu_cycles_per_batch=5e6)
devices = make_population(8, link, spec, rng, data_sizes=rng.integers(100, 400, 8).tolist())
dim = 20_000

print("device  compute(ms)  mean SNR (dB)")
for d in devices:
    print(f"{d.id:>6}  {1e3 * compute_time(d):>11.2f}  {10 * np.log10(d.mean_snr(link)):>13.1f}")

# the per-device ratio only depends on the time left after computing
d = devices[0]
for extra in (1e-3, 5e-3, 2e-2, 1e-1):
    print(f"deadline = compute + {1e3 * extra:5.1f} ms -> r* = {optimal_ratio(d, link, dim, compute_time(d) + extra):.4f}")

state = OptimizerState(B_t=0.5, alpha=np.full(8, 0.6), G=1.0, epsilon=0.01)
plan = transmission_plan(devices, link, state, dim)
print(f"\njoint plan: T_D = {1e3 * plan.deadline:.2f} ms after {plan.iterations} alternations")
print("objective trace:", np.round(plan.objective_trace[:6], 6), "...")
print("ratios:", plan.ratios.round(3))
print("success probabilities:", plan.success_probs.round(3))

# the same budget spent by fixed heuristics
with warnings.catch_warnings():
    warnings.simplefilter("ignore", DeadlineCapWarning)
    rivals = {
        "co (ratios only)": baseline_plan("co", {"deadline": 2 * plan.deadline}, devices, link, state, dim),
        "do (deadline only)": baseline_plan("do", {"ratio": 0.05}, devices, link, state, dim),
        "fedtoe q=0.9": baseline_plan("fedtoe", {"deadline": plan.deadline, "q_target": 0.9}, devices, link, state, dim),
    }
print(f"\n{'plan':<20} {'T_D (ms)':>9} {'objective':>10}")
print(f"{'joint':<20} {1e3 * plan.deadline:>9.2f} {plan.objective_value:>10.5f}")
for name, p in rivals.items():
    print(f"{name:<20} {1e3 * p.deadline:>9.2f} {p.objective_value:>10.5f}")
