"""
Unbiased sparsification, step by step
=====================================

Keep each coordinate with probability p_i, rescale survivors by 1/p_i.
The probabilities are water-filled so that the expected number kept is
r * S and the variance is as small as that budget allows.
"""
import numpy as np

from feelsim.compression import (
    approx_variance_coefficient,
    exact_variance,
    solve_preservation_probs,
    sparsify,
    sparsify_dense,
)

rng = np.random.default_rng(0)

# a tiny gradient first: the big entry saturates at p = 1
g = np.array([4.0, 2.0, 1.0, 1.0])
plan = solve_preservation_probs(g, 0.5)
print("probabilities:", plan.probs, " lambda:", plan.lam)
print("expected kept:", plan.expected_count, " exact variance:", exact_variance(g, plan))

# one draw is a sparse message; many draws average back to g
msg = sparsify(g, plan, rng)
print("one message:", msg.entries, f"({msg.payload_bits} bits)")
draws = sparsify_dense(g, plan, rng, 200_000)
print("mean of 2e5 draws:", draws.mean(axis=0).round(3))

# a dense Gaussian gradient: variance grows as the ratio shrinks
g = rng.standard_normal(10_000)
print(f"\n{'r':>6} {'exact var / |g|^2':>18} {'a/r - 1':>10}")
for r in (0.005, 0.01, 0.02, 0.04, 0.1, 0.3):
    plan = solve_preservation_probs(g, r)
    rel = exact_variance(g, plan) / (g @ g)
    print(f"{r:>6} {rel:>18.4f} {approx_variance_coefficient(g, r):>10.4f}")
# the two columns agree until the largest entries start to saturate
