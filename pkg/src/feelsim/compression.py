"""Unbiased stochastic sparsification of gradient vectors.

Each coordinate ``g_i`` is kept with probability ``p_i`` and rescaled to
``g_i / p_i`` so the compressed vector is an unbiased estimate of ``g``.
The probabilities minimise the compression variance subject to an
expected-density budget ``sum(p) = r * S``; the minimiser has the
water-filling form ``p_i = min(|g_i| / lam, 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, EmptyGradientError, InvalidRatioError


@dataclass(frozen=True)
class SparsificationPlan:
    probs: np.ndarray
    lam: float
    target_ratio: float

    @property
    def dim(self) -> int:
        return self.probs.size

    @property
    def expected_count(self) -> float:
        return float(self.probs.sum())


@dataclass(frozen=True)
class SparseUpdate:
    """Index/value encoding of a sparsified gradient.

    ``payload_bits`` follows the convention that one (index, value) pair
    costs ``encode_bits`` bits in total.
    """

    indices: np.ndarray
    values: np.ndarray
    dim: int
    payload_bits: int

    @property
    def count(self) -> int:
        return self.indices.size

    @property
    def entries(self) -> list[tuple[int, float]]:
        return list(zip(self.indices.tolist(), self.values.tolist()))

    def densify(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out


def _as_gradient(g) -> np.ndarray:
    g = np.asarray(g, dtype=float).ravel()
    if g.size < 1:
        raise DimensionMismatchError("gradient must have at least one entry")
    if not np.all(np.isfinite(g)):
        raise EmptyGradientError("gradient contains non-finite entries")
    return g


def solve_preservation_probs(g, r: float) -> SparsificationPlan:
    """Variance-optimal keep probabilities for density budget ``r``.

    Sorts ``|g|`` once in descending order (ties by original index) and
    scans for the saturation count ``j``: the first ``j`` entries get
    ``p = 1`` and the rest ``|g_i| / lam`` with
    ``lam = sum_{i>j} |g_(i)| / (r S - j)``.

    Zero entries get ``p = 0``. When the budget covers every non-zero
    entry all of them are kept with certainty.
    """
    g = _as_gradient(g)
    size = g.size
    r = float(r)
    if not (0.0 < r <= 1.0):
        raise InvalidRatioError(f"ratio must lie in (0, 1], got {r}")
    budget = r * size
    if budget < 1.0:
        raise InvalidRatioError(f"r*S = {budget:g} < 1; raise r or use a larger gradient")

    mag = np.abs(g)
    nonzero = mag > 0
    n_nonzero = int(nonzero.sum())
    if n_nonzero == 0:
        raise EmptyGradientError("cannot sparsify an all-zero gradient")

    if budget >= n_nonzero:
        probs = nonzero.astype(float)
        return SparsificationPlan(probs=probs, lam=float(mag[nonzero].min()), target_ratio=r)

    order = np.argsort(-mag, kind="stable")
    desc = mag[order][:n_nonzero]
    # tails[j] = sum of desc[j:]
    tails = np.cumsum(desc[::-1])[::-1]
    # j saturated entries need budget - j > 0
    j_max = int(np.ceil(budget)) - 1
    js = np.arange(j_max + 1)
    lams = tails[: j_max + 1] / (budget - js)
    ok = desc[: j_max + 1] <= lams
    j = int(np.argmax(ok))  # ok[j_max] always holds
    lam = float(lams[j])

    with np.errstate(over="ignore"):
        probs = np.minimum(mag / lam, 1.0)
    # keep p > 0 for tiny entries whose ratio underflows to zero
    probs[nonzero & (probs == 0)] = np.finfo(float).tiny
    probs[order[:j]] = 1.0
    return SparsificationPlan(probs=probs, lam=lam, target_ratio=r)


def keep_mask(probs: np.ndarray, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Independent Bernoulli(p_i) draws, optionally ``size`` rows of them."""
    shape = probs.shape if size is None else (size, probs.size)
    return rng.random(shape) < probs


def _check_dims(g: np.ndarray, plan: SparsificationPlan) -> None:
    if g.size != plan.dim:
        raise DimensionMismatchError(f"plan built for dimension {plan.dim}, gradient has {g.size}")


def sparsify(g, plan: SparsificationPlan, rng: np.random.Generator, encode_bits: int = 32) -> SparseUpdate:
    g = _as_gradient(g)
    _check_dims(g, plan)
    mask = keep_mask(plan.probs, rng)
    idx = np.flatnonzero(mask)
    values = g[idx] / plan.probs[idx]
    return SparseUpdate(indices=idx, values=values, dim=g.size, payload_bits=int(encode_bits) * idx.size)


def sparsify_dense(g, plan: SparsificationPlan, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` independent reconstructions of the sparsified ``g`` as rows."""
    g = _as_gradient(g)
    _check_dims(g, plan)
    scaled = np.divide(g, plan.probs, out=np.zeros_like(g), where=plan.probs > 0)
    return keep_mask(plan.probs, rng, size) * scaled


def exact_variance(g, plan: SparsificationPlan) -> float:
    """E||S(g) - g||^2 for the given plan; saturated entries contribute 0."""
    g = _as_gradient(g)
    _check_dims(g, plan)
    live = plan.probs > 0
    mag = np.abs(g[live])
    # g^2 (1/p - 1) written so that tiny p never produces inf * 0
    return float(np.sum(mag * (mag / plan.probs[live]) - mag * mag))


def l1_l2_ratio(g) -> float:
    """``||g||_1^2 / (S ||g||_2^2)``, which lies in (0, 1]."""
    g = _as_gradient(g)
    sq = float(np.dot(g, g))
    if sq == 0.0:
        raise EmptyGradientError("ratio undefined for an all-zero gradient")
    return float(np.abs(g).sum()) ** 2 / (g.size * sq)


def approx_variance_coefficient(g, r: float) -> float:
    """Closed-form estimate ``delta = a/r - 1`` of the relative variance.

    It ignores the ``p <= 1`` cap, so it can go negative for large ``r``;
    the result is clamped at zero.
    """
    if r <= 0:
        raise InvalidRatioError(f"ratio must be positive, got {r}")
    return max(l1_l2_ratio(g) / r - 1.0, 0.0)
