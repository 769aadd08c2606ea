"""Per-round compression-ratio and deadline planning.

The server picks per-device keep ratios ``r_m`` and a common deadline
``T_D`` minimising the estimated remaining training time

    T_D * (B_t + sum_m w_m^2 (alpha_m / (r_m q_m) - 1)),   w_m = d_m / d

where ``q_m`` is the asymptotic upload success probability. The problem
is solved by alternating a closed-form ratio update with a bisection on
the (convex) deadline subproblem.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import DeviceProfile, LinkBudget, compute_time
from .errors import (
    ConfigError,
    DeadlineCapWarning,
    DomainError,
    InfeasibleDeadlineError,
    InfeasiblePlanError,
    NumericError,
)

B_FLOOR = 1e-6
Q_FLOOR = 1e-8
DEFAULT_CAP_FACTOR = 1e3
MAX_ALTERNATIONS = 50

LN2 = math.log(2.0)


def lambert_w(y: float) -> float:
    """Principal branch of the Lambert W function for ``y >= 0``.

    Halley iteration started from ``log(1 + y)``; converges to a relative
    residual well under 1e-12 in a handful of steps over the whole range.
    """
    y = float(y)
    if not y >= 0.0:
        raise DomainError(f"lambert_w is only defined here for y >= 0, got {y}")
    if y == 0.0 or math.isinf(y):
        return y
    w = math.log1p(y)
    if y > 1e300:
        # exp(w) would overflow; solve w + log(w) = log(y) instead
        ly = math.log(y)
        for _ in range(100):
            step = (w + math.log(w) - ly) / (1.0 + 1.0 / w)
            w -= step
            if abs(step) <= 1e-16 * w:
                break
        return w
    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - y
        wp1 = w + 1.0
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= step
        if abs(step) <= 4e-16 * (1.0 + abs(w)):
            break
    return w


def h_inverse(y: float) -> float:
    """Solve ``x * 2**x = y`` for ``x >= 0``."""
    y = float(y)
    if not y >= 0.0:
        raise DomainError(f"h_inverse needs y >= 0, got {y}")
    return lambert_w(y * LN2) / LN2


@dataclass(frozen=True)
class TransmissionPlan:
    round: int
    deadline: float
    ratios: np.ndarray
    success_probs: np.ndarray
    objective_value: float
    iterations: int = 1
    objective_trace: tuple[float, ...] = ()
    capped: bool = False
    scheme: str = "jcdo"
    scheduled: np.ndarray | None = None  # None means every device uploads

    @property
    def mean_ratio(self) -> float:
        return float(np.mean(self.ratios))

    def is_scheduled(self, m: int) -> bool:
        return self.scheduled is None or bool(self.scheduled[m])


@dataclass
class OptimizerState:
    """Inputs to one round of planning.

    ``alpha`` holds per-device estimates of ``||g||_1^2 / (S ||g||_2^2)``;
    ``deadline_cap`` defaults to ``1e3 * max_m kappa / f_m``.
    """

    B_t: float
    alpha: np.ndarray
    G: float
    epsilon: float
    prev_deadline: float | None = None
    alt_tolerance: float = 1e-6
    deadline_cap: float | None = None
    round: int = 1
    max_alternations: int = MAX_ALTERNATIONS

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        if not self.G > 0:
            raise ConfigError(f"G must be positive, got {self.G}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if np.any(self.alpha <= 0) or np.any(self.alpha > 1 + 1e-12):
            raise ConfigError("alpha estimates must lie in (0, 1]")


@dataclass(frozen=True)
class Fleet:
    """Array view of a population for vectorised objective evaluation."""

    ids: np.ndarray
    snr: np.ndarray  # P sigma^2 / (B N0)
    t_comp: np.ndarray
    load: np.ndarray  # b S / B, so the exponent is load * r / (T - t_comp)
    weight_sq: np.ndarray  # (d_m / d)^2
    dim: int
    bandwidth: float
    encode_bits: np.ndarray
    h_star: np.ndarray = field(default=None)  # h^-1(snr / ln 2), T-independent

    @classmethod
    def build(cls, profiles: Sequence[DeviceProfile], link: LinkBudget, dim: int) -> "Fleet":
        if dim < 1:
            raise ConfigError("model dimension must be >= 1")
        sizes = np.array([p.data_size for p in profiles], dtype=float)
        bits = np.array([p.encode_bits for p in profiles], dtype=float)
        snr = np.array([p.mean_snr(link) for p in profiles])
        return cls(
            ids=np.array([p.id for p in profiles]),
            snr=snr,
            t_comp=np.array([compute_time(p) for p in profiles]),
            load=bits * dim / link.bandwidth,
            weight_sq=(sizes / sizes.sum()) ** 2,
            dim=dim,
            bandwidth=link.bandwidth,
            encode_bits=bits,
            h_star=np.array([h_inverse(s / LN2) for s in snr]),
        )

    @property
    def left_edge(self) -> float:
        return float(self.t_comp.max())

    def check_deadline(self, deadline: float) -> None:
        slack = deadline - self.t_comp
        if np.any(~(slack > 0)):
            m = int(np.argmin(slack))
            raise InfeasibleDeadlineError(
                f"deadline {deadline:g}s does not exceed compute time {self.t_comp[m]:g}s of device {self.ids[m]}"
            )

    def log_inv_q(self, ratios: np.ndarray, deadline: float) -> np.ndarray:
        """``-log q_m``; may be +inf when the upload is hopeless."""
        slack = deadline - self.t_comp
        if math.isinf(deadline):
            return np.zeros_like(self.snr)
        with np.errstate(over="ignore"):
            return np.expm1(self.load * ratios / slack * LN2) / self.snr

    def success_probs(self, ratios: np.ndarray, deadline: float) -> np.ndarray:
        return np.exp(-self.log_inv_q(ratios, deadline))

    def optimal_ratios(self, deadline: float) -> np.ndarray:
        slack = deadline - self.t_comp
        r = slack / self.load * self.h_star
        return np.clip(r, 1.0 / self.dim, 1.0)

    def objective(self, deadline: float, ratios: np.ndarray, B_t: float, alpha: np.ndarray) -> float:
        # alpha / (r q) evaluated in log space so overflow lands on +inf, not nan
        with np.errstate(over="ignore"):
            penalty = np.exp(np.log(alpha / ratios) + self.log_inv_q(ratios, deadline))
        return float(deadline * (B_t + np.sum(self.weight_sq * (penalty - 1.0))))


def optimal_ratio(dev: DeviceProfile, link: LinkBudget, dim: int, deadline: float) -> float:
    """Closed-form minimiser of ``1 / (r q(r))`` at a fixed deadline, clamped to [1/S, 1]."""
    slack = deadline - compute_time(dev)
    if not slack > 0:
        raise InfeasibleDeadlineError(f"device {dev.id}: deadline {deadline:g}s <= compute time")
    r = link.bandwidth * slack / (dev.encode_bits * dim) * h_inverse(dev.mean_snr(link) / LN2)
    return float(min(max(r, 1.0 / dim), 1.0))


def compute_bt(
    round: int,
    loss_gap: float,
    epsilon: float,
    *,
    strong_convexity: float,
    smoothness: float,
    chi: float,
    nu: float,
    grad_bound: float,
    sgd_variance: float,
    data_sizes: Sequence[float],
) -> float:
    """Training-state weight ``B_t`` of the planning objective.

    Clamped below at :data:`B_FLOOR`, which only bites once the loss gap
    has dropped under ``(mu / ell) * epsilon``.
    """
    mu, ell = strong_convexity, smoothness
    if not 3.0 * mu * chi > 2.0:
        raise ConfigError(
            f"3*mu*chi = {3 * mu * chi:g} must exceed 2; raise chi above {2 / (3 * mu):g}"
        )
    sizes = np.asarray(data_sizes, dtype=float)
    wsq = float(np.sum((sizes / sizes.sum()) ** 2))
    lead = (round + nu) * (3.0 * mu * chi - 2.0) / (mu * chi**2 * grad_bound)
    value = lead * (loss_gap - mu / ell * epsilon) + wsq * sgd_variance / grad_bound
    return max(value, B_FLOOR)


def remaining_rounds_bound(
    round: int,
    loss_gap: float,
    epsilon: float,
    ratios,
    success_probs,
    alpha,
    *,
    strong_convexity: float,
    smoothness: float,
    chi: float,
    nu: float,
    grad_bound: float,
    sgd_variance: float,
    data_sizes: Sequence[float],
) -> float:
    """Upper bound on rounds still needed to reach ``epsilon``; clamped at 0."""
    mu, ell = strong_convexity, smoothness
    sizes = np.asarray(data_sizes, dtype=float)
    wsq = (sizes / sizes.sum()) ** 2
    A = ell * chi**2 / (3.0 * mu * chi - 2.0)
    value = (
        ell * (round + nu) / (mu * epsilon) * loss_gap
        - round
        - nu
        + A / epsilon * np.sum(wsq) * sgd_variance
        + A * grad_bound / epsilon * np.sum(wsq * (np.asarray(alpha) / (np.asarray(ratios) * np.asarray(success_probs)) - 1.0))
    )
    return max(float(value), 0.0)


def _cap(fleet: Fleet, state: OptimizerState) -> float:
    cap = state.deadline_cap if state.deadline_cap is not None else DEFAULT_CAP_FACTOR * fleet.left_edge
    if not cap > fleet.left_edge:
        raise InfeasiblePlanError(f"deadline cap {cap:g}s does not exceed the slowest compute time")
    return cap


def deadline_objective(
    deadline: float,
    ratios,
    profiles: Sequence[DeviceProfile],
    link: LinkBudget,
    state: OptimizerState,
    dim: int,
) -> float:
    fleet = Fleet.build(profiles, link, dim)
    fleet.check_deadline(deadline)
    return fleet.objective(deadline, np.asarray(ratios, dtype=float), state.B_t, state.alpha)


def _bisect_deadline(fleet: Fleet, ratios: np.ndarray, state: OptimizerState, cap: float) -> tuple[float, bool]:
    lo_edge = fleet.left_edge * (1.0 + 1e-6)

    def f(t: float) -> float:
        v = fleet.objective(t, ratios, state.B_t, state.alpha)
        if math.isnan(v):
            raise NumericError(f"deadline objective is nan at T_D={t!r}")
        return v

    def slope(t: float) -> float:
        h = 1e-6 * t
        a, b = max(t - h, lo_edge), t + h
        fa, fb = f(a), f(b)
        if math.isinf(fa) and math.isinf(fb):
            # still inside the outage barrier next to the compute-time edge
            return -1.0
        return fb - fa

    if slope(lo_edge) >= 0.0:
        return lo_edge, False
    if slope(cap) < 0.0:
        return cap, True
    lo, hi = lo_edge, cap
    tol = 1e-9 * cap
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi), False


def optimal_deadline(
    ratios,
    profiles: Sequence[DeviceProfile],
    link: LinkBudget,
    state: OptimizerState,
    dim: int,
) -> float:
    """Minimise the planning objective over the deadline for fixed ratios.

    Bisection on the sign of a central-difference derivative over
    ``[max_m kappa/f_m * (1 + 1e-6), cap]``. Emits
    :class:`DeadlineCapWarning` when the minimiser is the cap itself.
    """
    fleet = Fleet.build(profiles, link, dim)
    t, capped = _bisect_deadline(fleet, np.asarray(ratios, dtype=float), state, _cap(fleet, state))
    if capped:
        warnings.warn(f"optimal deadline hit the cap {t:g}s", DeadlineCapWarning, stacklevel=2)
    return t


def _finish(fleet: Fleet, state: OptimizerState, scheme: str, deadline: float, ratios: np.ndarray,
            iterations: int = 1, trace: tuple[float, ...] = (), capped: bool = False,
            drop_hopeless: bool = False) -> TransmissionPlan:
    q = fleet.success_probs(ratios, deadline)
    scheduled = None
    if drop_hopeless and np.any(q < Q_FLOOR):
        # a fixed heuristic has no way to adapt, so devices it cannot
        # serve sit the round out instead of voiding the whole plan
        scheduled = q >= Q_FLOOR
        if not scheduled.any():
            raise InfeasiblePlanError(f"{scheme}: every device has success probability below {Q_FLOOR:g}")
    elif np.any(q < Q_FLOOR):
        m = int(np.argmin(q))
        raise InfeasiblePlanError(
            f"{scheme}: device {fleet.ids[m]} has success probability {q[m]:.3g} < {Q_FLOOR:g} "
            f"at T_D={deadline:g}s, r={ratios[m]:.4g}"
        )
    if math.isinf(deadline):
        objective = math.inf
    else:
        objective = fleet.objective(deadline, ratios, state.B_t, state.alpha)
    return TransmissionPlan(
        round=state.round,
        deadline=float(deadline),
        ratios=ratios,
        success_probs=q,
        objective_value=objective,
        iterations=iterations,
        objective_trace=trace or (objective,),
        capped=capped,
        scheme=scheme,
        scheduled=scheduled,
    )


def _alternate(fleet: Fleet, state: OptimizerState) -> TransmissionPlan:
    cap = _cap(fleet, state)
    t = state.prev_deadline if state.prev_deadline is not None else cap / 10.0
    if not fleet.left_edge < t <= cap:
        t = cap / 10.0
    if not t > fleet.left_edge:
        raise InfeasiblePlanError(
            f"no feasible deadline: device {fleet.ids[int(np.argmax(fleet.t_comp))]} "
            f"needs {fleet.left_edge:g}s to compute but the warm start is {t:g}s"
        )
    before = 0.0
    trace: list[float] = []
    capped = False
    it = 0
    while it == 0 or (abs(t - before) >= state.alt_tolerance and it < state.max_alternations):
        before = t
        ratios = fleet.optimal_ratios(t)
        t, capped = _bisect_deadline(fleet, ratios, state, cap)
        value = fleet.objective(t, ratios, state.B_t, state.alpha)
        if trace and value > trace[-1] + 1e-12 * abs(trace[-1]):
            raise NumericError(
                f"alternating objective increased from {trace[-1]!r} to {value!r} at iteration {it + 1}"
            )
        trace.append(value)
        it += 1
    # ratio step at the final deadline can only lower the objective
    ratios = fleet.optimal_ratios(t)
    if capped:
        warnings.warn(f"optimal deadline hit the cap {t:g}s", DeadlineCapWarning, stacklevel=3)
    return _finish(fleet, state, "jcdo", t, ratios, iterations=it, trace=tuple(trace), capped=capped)


def transmission_plan(
    profiles: Sequence[DeviceProfile],
    link: LinkBudget,
    state: OptimizerState,
    dim: int,
) -> TransmissionPlan:
    """Alternate closed-form ratios and the deadline bisection until the
    deadline moves by less than ``state.alt_tolerance``."""
    return _alternate(Fleet.build(profiles, link, dim), state)


def _per_device(value, n: int, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()
    if np.any(~(arr > 0)) or np.any(arr > 1):
        raise ConfigError(f"{name} must lie in (0, 1]")
    return arr


def fedtoe_ratios(fleet: Fleet, deadline: float, q_target: float) -> np.ndarray:
    if not 0.0 < q_target < 1.0:
        raise InfeasiblePlanError(f"target success probability must lie in (0, 1), got {q_target}")
    slack = deadline - fleet.t_comp
    r = slack / fleet.load * np.log2(1.0 - fleet.snr * math.log(q_target))
    return np.clip(r, 1.0 / fleet.dim, 1.0)


def baseline_plan(
    kind: str,
    params: dict,
    profiles: Sequence[DeviceProfile],
    link: LinkBudget,
    state: OptimizerState,
    dim: int,
) -> TransmissionPlan:
    """Plans for the comparison schemes.

    ``fedavg``: full precision, no deadline. ``fixed_r``: ``ratio`` and
    ``deadline`` as given. ``co``: closed-form ratios at ``deadline``.
    ``do``: bisected deadline at ``ratio``. ``fedtoe``: ratios giving every
    device the success probability ``q_target`` at ``deadline``.
    """
    fleet = Fleet.build(profiles, link, dim)
    n = len(profiles)
    if kind == "jcdo":
        return _alternate(fleet, state)
    if kind == "fedavg":
        return _finish(fleet, state, kind, math.inf, np.ones(n))
    if kind == "do":
        ratios = _per_device(params["ratio"], n, "ratio")
        t, capped = _bisect_deadline(fleet, ratios, state, _cap(fleet, state))
        if capped:
            warnings.warn(f"optimal deadline hit the cap {t:g}s", DeadlineCapWarning, stacklevel=2)
        return _finish(fleet, state, kind, t, ratios, capped=capped)
    deadline = float(params["deadline"])
    fleet.check_deadline(deadline)
    if kind == "fixed_r":
        ratios = _per_device(params["ratio"], n, "ratio")
    elif kind == "co":
        ratios = fleet.optimal_ratios(deadline)
    elif kind == "fedtoe":
        ratios = fedtoe_ratios(fleet, deadline, float(params["q_target"]))
    else:
        raise ConfigError(f"unknown scheme {kind!r}")
    return _finish(fleet, state, kind, deadline, ratios, drop_hopeless=kind == "fixed_r")
