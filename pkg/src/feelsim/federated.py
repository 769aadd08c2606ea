"""Server-side state, unbiased aggregation and the global update."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .channel import DeviceProfile
from .compression import SparseUpdate, l1_l2_ratio
from .errors import ConfigError, DimensionMismatchError, InfeasiblePlanError
from .optimizer import TransmissionPlan
from .tasks import LearningTask, Partition, local_gradient


@dataclass(frozen=True)
class TrainingState:
    """Global model plus the running estimates the planner consumes.

    ``G_est`` is a running max of ``||g_m||^2`` over devices and rounds;
    ``alpha_est[m]`` a running max of ``||g_m||_1^2 / (S ||g_m||_2^2)``.
    """

    model: np.ndarray
    round: int
    lr_chi: float
    lr_nu: float
    G_est: float
    alpha_est: np.ndarray
    cumulative_time: float = 0.0

    @property
    def lr(self) -> float:
        return self.lr_chi / (self.round + self.lr_nu)

    @classmethod
    def initial(cls, task: LearningTask, model, chi: float, nu: float, G: float, alpha) -> "TrainingState":
        if not 3.0 * task.strong_convexity * chi > 2.0:
            raise ConfigError(
                f"3*mu*chi = {3 * task.strong_convexity * chi:g} <= 2; raise chi above {2 / (3 * task.strong_convexity):g}"
            )
        eta1 = chi / (1 + nu)
        if eta1 > 1.0 / (2.0 * task.smoothness):
            raise ConfigError(
                f"first learning rate {eta1:g} exceeds 1/(2*ell) = {1 / (2 * task.smoothness):g}; "
                f"raise nu to at least {2 * task.smoothness * chi - 1:g}"
            )
        return cls(
            model=np.array(model, dtype=float),
            round=1,
            lr_chi=float(chi),
            lr_nu=float(nu),
            G_est=float(G),
            alpha_est=np.array(alpha, dtype=float),
        )

    def observe(self, gradients: Sequence[np.ndarray]) -> "TrainingState":
        G = max([self.G_est] + [float(g @ g) for g in gradients])
        alpha = self.alpha_est.copy()
        for m, g in enumerate(gradients):
            if np.any(g):
                alpha[m] = max(alpha[m], l1_l2_ratio(g))
        return replace(self, G_est=G, alpha_est=alpha)


@dataclass(frozen=True)
class RoundOutcome:
    round: int
    deadline_used: float
    plan: TransmissionPlan
    delivered: frozenset
    compute_times: np.ndarray
    upload_times: np.ndarray
    loss: float
    loss_gap: float
    elapsed: float
    broadcast_time: float = 0.0
    payload_bits: np.ndarray = field(default=None, repr=False)


def aggregate(
    updates: Iterable[tuple[int, SparseUpdate]],
    plan: TransmissionPlan,
    profiles: Sequence[DeviceProfile],
    dim: int | None = None,
) -> np.ndarray:
    """Inverse-probability weighted sum ``sum_{m in K} d_m / (d q_m) * update_m``.

    ``updates`` holds only the delivered devices. Dividing by ``q_m``
    compensates for the chance the device missed the deadline, so the
    result is unbiased for the full-participation average.
    """
    pos = {p.id: i for i, p in enumerate(profiles)}
    total = float(sum(p.data_size for p in profiles))
    q = np.asarray(plan.success_probs, dtype=float)
    out = None if dim is None else np.zeros(dim)
    for dev_id, upd in updates:
        i = pos[dev_id]
        if not q[i] > 0:
            raise InfeasiblePlanError(f"device {dev_id} delivered under a zero success probability; refusing to scale by 1/0")
        if out is None:
            out = np.zeros(upd.dim)
        if upd.dim != out.size:
            raise DimensionMismatchError(f"update from device {dev_id} has dimension {upd.dim}, expected {out.size}")
        out[upd.indices] += profiles[i].data_size / (total * q[i]) * upd.values
    if out is None:
        raise DimensionMismatchError("no updates and no dimension given")
    return out


def apply_update(state: TrainingState, aggregated: np.ndarray, gradients: Sequence[np.ndarray] | None = None,
                 elapsed: float = 0.0) -> TrainingState:
    """One SGD step with ``eta_t = chi / (t + nu)``; ``t`` then advances.

    When ``gradients`` (the raw local gradients of this round) are given
    the running ``G`` / ``alpha`` estimates absorb them.
    """
    aggregated = np.asarray(aggregated, dtype=float)
    if aggregated.shape != state.model.shape:
        raise DimensionMismatchError(f"update shape {aggregated.shape} != model shape {state.model.shape}")
    new = replace(
        state,
        model=state.model - state.lr * aggregated,
        round=state.round + 1,
        cumulative_time=state.cumulative_time + elapsed,
    )
    return new.observe(gradients) if gradients is not None else new


@dataclass(frozen=True)
class GradientStats:
    sgd_variance: float
    grad_bound: float
    alpha: np.ndarray


def estimate_gradient_stats(
    task: LearningTask,
    partition: Partition,
    w,
    batch_size: int | None,
    rng_for: Callable[[int], np.random.Generator],
    resamples: int = 200,
) -> GradientStats:
    """Mini-batch statistics at ``w`` over ``resamples`` draws per device.

    ``sgd_variance``: max over devices of the mean ``||g - grad L_m||^2``.
    ``grad_bound``: max over devices of the mean ``||g||^2``.
    ``alpha``: per-device max of the l1/l2 ratio.
    """
    var, bound, alpha = 0.0, 0.0, np.zeros(len(partition))
    for m in range(len(partition)):
        full = local_gradient(task, partition, m, w, None)
        rng = rng_for(m)
        draws = np.array([local_gradient(task, partition, m, w, batch_size, rng) for _ in range(resamples)])
        var = max(var, float(np.mean(np.sum((draws - full) ** 2, axis=1))))
        bound = max(bound, float(np.mean(np.sum(draws**2, axis=1))))
        alpha[m] = max(l1_l2_ratio(g) for g in draws if np.any(g))
    return GradientStats(sgd_variance=var, grad_bound=bound, alpha=alpha)
