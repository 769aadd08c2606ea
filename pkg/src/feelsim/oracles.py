"""Independent reference computations.

Each oracle recomputes a quantity the library produces, but by a
different route: root finding instead of the sorted scan, golden-section
search instead of the closed-form ratio, dense grids instead of
bisection, plain Monte Carlo instead of the analytic outage formula.
Tests freeze their outputs; ``feelsim oracle <name>`` prints them.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy import optimize

LN2 = math.log(2.0)


def preservation_lambda(g, r: float) -> float:
    """``lam`` solving ``sum_i min(|g_i|/lam, 1) = r S`` by Brent's method."""
    mag = np.abs(np.asarray(g, dtype=float))
    target = r * mag.size

    def excess(lam):
        return np.minimum(mag / lam, 1.0).sum() - target

    hi = mag.sum() / target * 2.0 + mag.max()
    lo = mag[mag > 0].min() * 1e-12
    return optimize.brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def variance_by_definition(g, probs) -> float:
    """``sum E(X_i - g_i)^2`` with ``X_i = g_i/p_i`` w.p. ``p_i`` else 0."""
    g = np.asarray(g, dtype=float)
    total = 0.0
    for gi, pi in zip(g, probs):
        if pi > 0:
            total += pi * (gi / pi - gi) ** 2 + (1 - pi) * gi**2
    return float(total)


def lambert_w_fixed_point(y: float = 1.0, iters: int = 200) -> float:
    """Principal ``W(y)`` via ``x <- log(y) - log(x)`` averaged with the old
    iterate; for ``y = 1`` this is the classic ``x = exp(-x)`` map."""
    x = 0.5 if y == 1.0 else max(math.log1p(y), 1e-3)
    for _ in range(iters):
        x = 0.5 * (x + (math.exp(-x) if y == 1.0 else math.log(y / x)))
    return x


def ratio_objective(snr: float, load: float, slack: float) -> Callable[[float], float]:
    """``g(r) = (2^(load r / slack) - 1) / snr - ln r``, the per-device
    compression-plus-outage penalty whose minimiser is the optimal ratio."""

    def g(r: float) -> float:
        return math.expm1(load * r / slack * LN2) / snr - math.log(r)

    return g


def golden_ratio(snr: float, load: float, slack: float, dim: int) -> float:
    """Argmin of ``g`` over ``[1/S, 1]`` by golden-section search in ``log r``."""
    g = ratio_objective(snr, load, slack)
    lo, hi = math.log(1.0 / dim), 0.0

    def f(u):
        try:
            return g(math.exp(u))
        except OverflowError:
            return math.inf

    grid = np.linspace(lo - 1.0, hi + 1.0, 401)
    vals = np.array([f(u) for u in grid])
    i = int(np.clip(np.argmin(vals), 1, len(grid) - 2))
    a, b = grid[i - 1], grid[i + 1]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > 1e-12:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    u = 0.5 * (a + b)
    return float(math.exp(min(max(u, lo), hi)))


def plan_objective(deadline: float, ratios, snr, t_comp, load, weight_sq, B_t: float, alpha) -> float:
    """Planning objective written out term by term, one device at a time."""
    total = B_t
    for r, s, tc, ld, w, a in zip(ratios, snr, t_comp, load, weight_sq, alpha):
        expo = float(ld * r / (deadline - tc))
        try:
            q = math.exp(-(2.0**expo - 1.0) / s)
        except OverflowError:
            q = 0.0
        total += w * (a / (r * q) - 1.0) if q > 0 else math.inf
    return deadline * total


def grid_deadline(ratios, snr, t_comp, load, weight_sq, B_t, alpha, cap: float, points: int = 10_000):
    """Argmin of the objective over ``points`` evenly spaced deadlines."""
    lo = max(t_comp) * (1 + 1e-6)
    grid = np.linspace(lo, cap, points)
    with np.errstate(over="ignore"):
        vals = np.array([plan_objective(t, ratios, snr, t_comp, load, weight_sq, B_t, alpha) for t in grid])
    return float(grid[int(np.argmin(vals))]), float(grid[1] - grid[0])


def grid_joint(snr: float, t_comp: float, load: float, B_t: float, alpha: float, dim: int,
               t_hi: float, points: int = 600, polish: bool = True):
    """Single-device joint argmin over a ``points`` x ``points`` (r, T) grid.

    With ``polish`` the grid winner seeds a Nelder-Mead search in
    ``(log r, T)``; on a flat valley the raw grid cell alone can sit a
    few cells away from the true minimiser. Returns ``(r, T, dr, dT)``
    where ``dr`` is measured in ``log r``.
    """
    T = np.linspace(t_comp * (1 + 1e-6), t_hi, points + 1)[1:]
    logr = np.linspace(math.log(1.0 / dim), 0.0, points)
    R = np.exp(logr)[:, None]
    with np.errstate(over="ignore"):
        log_inv_q = np.expm1(load * R / (T[None, :] - t_comp) * LN2) / snr
        obj = T[None, :] * (B_t + np.exp(np.log(alpha / R) + log_inv_q) - 1.0)
    i, j = np.unravel_index(np.argmin(obj), obj.shape)
    best_u, best_t = float(logr[i]), float(T[j])
    dr, dT = float(logr[1] - logr[0]), float(T[1] - T[0])
    if polish:
        lo_u, lo_t = float(logr[0]), float(T[0])

        def f(x):
            u, t = min(max(x[0], lo_u), 0.0), max(x[1], lo_t)
            try:
                return plan_objective(t, [math.exp(u)], [snr], [t_comp], [load], [1.0], B_t, [alpha])
            except OverflowError:
                return math.inf

        res = optimize.minimize(f, [best_u, best_t], method="Nelder-Mead",
                                options={"xatol": 1e-12, "fatol": 0.0, "maxiter": 20_000,
                                         "initial_simplex": [[best_u, best_t], [best_u + dr, best_t],
                                                             [best_u, best_t + dT]]})
        best_u, best_t = min(max(res.x[0], lo_u), 0.0), max(res.x[1], lo_t)
    return float(math.exp(best_u)), float(best_t), dr, dT


def bt_by_hand(t, gap, eps, mu, ell, chi, nu, G, sigma2, sizes) -> float:
    d = float(sum(sizes))
    first = (t + nu) * (3 * mu * chi - 2) / (mu * chi**2 * G) * (gap - mu / ell * eps)
    second = sum((s / d) ** 2 for s in sizes) * sigma2 / G
    return first + second


def success_frequency(snr_mean_gain: float, tx_power: float, noise_power: float, bandwidth: float,
                      t_comp: float, deadline: float, bits: int, kept_counts, rng: np.random.Generator) -> float:
    """Fraction of simulated uploads that beat the deadline.

    One Rayleigh gain per upload; ``kept_counts`` are the actual sparse
    payload sizes, so the Monte Carlo sees their randomness too.
    """
    kept = np.asarray(kept_counts)
    gain = rng.exponential(snr_mean_gain, size=kept.size)
    rate = bandwidth * np.log2(1.0 + tx_power * gain / noise_power)
    with np.errstate(divide="ignore"):
        t_up = np.where(kept > 0, bits * kept / rate, 0.0)
    return float(np.mean(t_comp + t_up <= deadline))


def path_loss(distance_km: float) -> float:
    return 128.1 + 37.6 * math.log10(distance_km)


def _print_preservation():
    g, r = [4.0, 2.0, 1.0, 1.0], 0.5
    lam = preservation_lambda(g, r)
    p = [min(abs(x) / lam, 1.0) for x in g]
    return {"lambda": lam, "probs": p, "variance": variance_by_definition(g, p),
            "uniform_variance": variance_by_definition([1, 1, 1, 1], [0.25] * 4)}


def _print_lambert():
    return {"W(1)": lambert_w_fixed_point(1.0), "W(e)": lambert_w_fixed_point(math.e)}


def _print_ratio():
    # 18 dBm, 0.1 km, 1 MHz, -174 dBm/Hz, S = 1e4, b = 32, 5 ms compute, 20 ms deadline
    snr = 10 ** ((18 - 30) / 10) * 10 ** (-path_loss(0.1) / 10) / (1e6 * 10 ** ((-174 - 30) / 10))
    load = 32 * 1e4 / 1e6
    return {"snr": snr, "golden_ratio": golden_ratio(snr, load, 0.015, 10_000)}


def _print_bt():
    return {"B_t": bt_by_hand(1, 1.0, 0.1, 1.0, 1.0, 10.0, 100.0, 1.0, 0.5, [1] * 10)}


def _print_path_loss():
    return {"0.01 km": path_loss(0.01), "0.1 km": path_loss(0.1), "0.5 km": path_loss(0.5)}


ORACLES: dict[str, Callable[[], dict]] = {
    "preservation": _print_preservation,
    "lambert": _print_lambert,
    "ratio": _print_ratio,
    "bt": _print_bt,
    "path-loss": _print_path_loss,
}
