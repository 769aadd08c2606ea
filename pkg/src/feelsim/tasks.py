"""Synthetic strongly convex learning tasks and device partitions.

Two task families stand in for neural-network training:

* ``quadratic``: least squares, ``f(w; x, y) = (x.w - y)^2 / 2``.
* ``logistic-l2``: binary cross-entropy plus ``reg/2 ||w||^2``.

Both are exactly smooth and strongly convex, so ``smoothness`` and
``strong_convexity`` are certified bounds rather than estimates.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

KINDS = ("quadratic", "logistic-l2")


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "quadratic"
    dim: int = 100
    samples_per_device: int = 200
    n_classes: int = 10
    heterogeneity: float = 1.0
    partition: str = "shard"
    shards_per_device: int = 2
    noise: float = 0.5
    reg: float = 0.1
    feature_scale: tuple[float, float] = (0.3, 1.5)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"task kind must be one of {KINDS}, got {self.kind!r}")
        if self.dim < 1 or self.samples_per_device < 1:
            raise ConfigError("dim and samples_per_device must be >= 1")
        if self.partition not in ("iid", "shard"):
            raise ConfigError(f"partition must be 'iid' or 'shard', got {self.partition!r}")


@dataclass(frozen=True)
class Partition:
    assignment: tuple[np.ndarray, ...]
    scheme: str

    @property
    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignment]

    def __len__(self) -> int:
        return len(self.assignment)


@dataclass(frozen=True, eq=False)
class LearningTask:
    kind: str
    features: np.ndarray
    targets: np.ndarray
    labels: np.ndarray
    reg: float = 0.0
    optimum: np.ndarray = field(default=None, repr=False)
    optimum_loss: float = float("nan")
    smoothness: float = float("nan")
    strong_convexity: float = float("nan")
    sgd_variance_bound: float = float("nan")
    grad_norm_bound: float = float("nan")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    def loss(self, w, idx=None) -> float:
        X, y = self._rows(idx)
        z = X @ w
        if self.kind == "quadratic":
            return 0.5 * float(np.mean((z - y) ** 2))
        return float(np.mean(np.logaddexp(0.0, -y * z))) + 0.5 * self.reg * float(w @ w)

    def grad(self, w, idx=None) -> np.ndarray:
        X, y = self._rows(idx)
        z = X @ w
        if self.kind == "quadratic":
            return X.T @ (z - y) / len(y)
        # d/dz log(1 + exp(-y z)) = -y * sigmoid(-y z)
        s = -y * _sigmoid(-y * z)
        return X.T @ s / len(y) + self.reg * w

    def hessian(self, w=None) -> np.ndarray:
        X = self.features
        if self.kind == "quadratic":
            return X.T @ X / len(X)
        p = _sigmoid(X @ w)
        return (X.T * (p * (1 - p))) @ X / len(X) + self.reg * np.eye(self.dim)

    def loss_gap(self, w) -> float:
        return self.loss(w) - self.optimum_loss

    def _rows(self, idx):
        if idx is None:
            return self.features, self.targets
        return self.features[idx], self.targets[idx]


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _solve_logistic(task: LearningTask, tol: float = 1e-10) -> np.ndarray:
    # damped Newton; the objective is strongly convex so this is globally convergent
    w = np.zeros(task.dim)
    for _ in range(200):
        g = task.grad(w)
        if np.linalg.norm(g) <= tol:
            break
        step = np.linalg.solve(task.hessian(w), g)
        t, f0 = 1.0, task.loss(w)
        while task.loss(w - t * step) > f0 - 0.25 * t * (g @ step) and t > 1e-12:
            t *= 0.5
        w = w - t * step
    return w


def finalize_task(kind: str, features, targets, labels=None, reg: float = 0.0) -> LearningTask:
    """Build a task from explicit data and compute ``w*``, ``L(w*)``, ``ell``, ``mu``."""
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    labels = np.zeros(len(y), dtype=int) if labels is None else np.asarray(labels)
    task = LearningTask(kind=kind, features=X, targets=y, labels=labels, reg=float(reg))
    if kind == "quadratic":
        H = task.hessian()
        eig = np.linalg.eigvalsh(H)
        mu, ell = float(eig[0]), float(eig[-1])
        if not mu > 1e-10 * max(ell, 1e-300):
            raise ConfigError(f"quadratic task is not strongly convex (min eigenvalue {mu:g})")
        w_star = np.linalg.solve(H, X.T @ y / len(y))
    elif kind == "logistic-l2":
        if not reg > 0:
            raise ConfigError("logistic-l2 needs a positive regulariser")
        mu = float(reg)
        ell = float(np.linalg.eigvalsh(X.T @ X / len(X))[-1]) / 4.0 + mu
        w_star = _solve_logistic(task)
    else:
        raise ConfigError(f"unknown task kind {kind!r}")
    return replace(task, optimum=w_star, optimum_loss=task.loss(w_star), smoothness=ell, strong_convexity=mu)


def _generate(spec: TaskSpec, n: int, rng: np.random.Generator):
    P, K = spec.dim, spec.n_classes
    labels = np.repeat(np.arange(K), -(-n // K))[:n]
    rng.shuffle(labels)
    lo, hi = spec.feature_scale
    scales = np.sqrt(np.linspace(lo**2, hi**2, P))
    rng.shuffle(scales)
    means = spec.heterogeneity * rng.standard_normal((K, P)) / np.sqrt(P)
    X = means[labels] + rng.standard_normal((n, P)) * scales
    w_true = rng.standard_normal(P) / np.sqrt(P)
    if spec.kind == "quadratic":
        offsets = spec.heterogeneity * rng.standard_normal(K)
        y = X @ w_true + offsets[labels] + spec.noise * rng.standard_normal(n)
    else:
        logits = X @ w_true * 3.0 + spec.heterogeneity * (2.0 * (labels % 2) - 1.0)
        y = np.where(rng.random(n) < _sigmoid(logits), 1.0, -1.0)
    return X, y, labels


def make_partition(labels, n_devices: int, scheme: str, rng: np.random.Generator, shards_per_device: int = 2) -> Partition:
    """Split sample indices across devices.

    ``iid``: random permutation dealt into near-equal blocks.
    ``shard``: indices sorted by label, cut into ``n_devices *
    shards_per_device`` contiguous shards, shards dealt at random.
    """
    n = len(labels)
    if scheme == "iid":
        blocks = np.array_split(rng.permutation(n), n_devices)
    elif scheme == "shard":
        order = np.argsort(labels, kind="stable")
        shards = np.array_split(order, n_devices * shards_per_device)
        deal = rng.permutation(len(shards)).reshape(n_devices, shards_per_device)
        blocks = [np.sort(np.concatenate([shards[s] for s in row])) for row in deal]
    else:
        raise ConfigError(f"unknown partition scheme {scheme!r}")
    if any(len(b) == 0 for b in blocks):
        raise ConfigError("partition left a device without samples")
    return Partition(assignment=tuple(np.asarray(b) for b in blocks), scheme=scheme)


def make_task(spec: TaskSpec, n_devices: int, rng: np.random.Generator) -> tuple[LearningTask, Partition]:
    n = spec.samples_per_device * n_devices
    last = None
    for _ in range(5):
        X, y, labels = _generate(spec, n, rng)
        try:
            task = finalize_task(spec.kind, X, y, labels, reg=spec.reg if spec.kind == "logistic-l2" else 0.0)
        except ConfigError as exc:
            last = exc
            continue
        return task, make_partition(labels, n_devices, spec.partition, rng, spec.shards_per_device)
    raise ConfigError(f"could not generate a well-conditioned task after 5 attempts: {last}")


def local_gradient(task: LearningTask, partition: Partition, dev: int, w, batch_size: int | None,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Mini-batch gradient of device ``dev``'s average loss.

    Sampling is without replacement; ``batch_size=None`` or the full local
    size gives the exact local gradient without touching ``rng``.
    """
    idx = partition.assignment[dev]
    if batch_size is None or batch_size == len(idx):
        return task.grad(w, idx)
    if batch_size > len(idx) or batch_size < 1:
        raise ConfigError(f"batch size {batch_size} invalid for device {dev} with {len(idx)} samples")
    return task.grad(w, rng.choice(idx, size=batch_size, replace=False))
