"""Configuration, simulation loop, suites and report files."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml
from scipy.optimize import minimize_scalar

from . import streams
from .channel import (
    DeviceProfile,
    LinkBudget,
    PopulationSpec,
    compute_time,
    dbm_to_watts,
    draw_channel,
    make_population,
    upload_time,
)
from .compression import SparseUpdate, solve_preservation_probs, sparsify
from .errors import ConfigError, FeelsimError, NumericError
from .federated import RoundOutcome, TrainingState, aggregate, apply_update, estimate_gradient_stats
from .optimizer import OptimizerState, TransmissionPlan, Fleet, baseline_plan, compute_bt
from .tasks import LearningTask, Partition, TaskSpec, local_gradient, make_task

log = logging.getLogger(__name__)

SCHEMES = ("jcdo", "fedavg", "fixed_r", "co", "do", "fedtoe")
CSV_HEADER = ["round", "time", "loss", "loss_gap", "deadline", "mean_ratio", "delivered", "objective"]
OUTPUT_ENV = "FEELSIM_OUTPUT_DIR"
CALIBRATED = "calibrated"


@dataclass(frozen=True)
class PopulationConfig:
    count: int = 10
    link: LinkBudget = LinkBudget(bandwidth=1e6, noise_psd=dbm_to_watts(-174.0))
    spec: PopulationSpec = PopulationSpec()
    devices: tuple[DeviceProfile, ...] | None = None


@dataclass(frozen=True)
class SchemeConfig:
    """Scheme and its parameters.

    ``ratio`` / ``deadline`` may be the string ``"calibrated"``: the
    deadline then comes from the first-round joint plan and the ratio is
    the best common ratio at that deadline, scaled by ``ratio_scale``.
    """

    kind: str = "jcdo"
    ratio: Any = None
    ratio_scale: float = 1.0
    deadline: Any = None
    q_target: float | None = None
    alt_tolerance: float = 1e-6
    deadline_cap: float | None = None

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.kind!r}")
        need = {"fixed_r": ("ratio", "deadline"), "co": ("deadline",), "do": ("ratio",), "fedtoe": ("deadline", "q_target")}
        for key in need.get(self.kind, ()):
            if getattr(self, key) is None:
                raise ConfigError(f"scheme {self.kind!r} needs '{key}'")


@dataclass(frozen=True)
class TrainingConfig:
    chi: float = 10.0
    nu: float = 100.0
    batch_size: int | None = 32
    epsilon: float = 1e-2
    max_rounds: int = 2000
    max_time: float = math.inf
    stats_resamples: int = 200


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    task: TaskSpec = TaskSpec()
    population: PopulationConfig = PopulationConfig()
    scheme: SchemeConfig = SchemeConfig()
    training: TrainingConfig = TrainingConfig()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))

    def with_scheme(self, **kw) -> "ExperimentConfig":
        return replace(self, scheme=SchemeConfig(**{**self.scheme.__dict__, **kw}))


# ---------------------------------------------------------------- config io


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _read_yaml(path: Path, seen: tuple = ()) -> dict:
    path = Path(path).resolve()
    if path in seen:
        raise ConfigError(f"include cycle through {path}")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    includes = data.pop("include", [])
    if isinstance(includes, str):
        includes = [includes]
    merged: dict = {}
    for inc in includes:
        merged = _merge(merged, _read_yaml(path.parent / inc, seen + (path,)))
    return _merge(merged, data)


def _pair(v, name) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a [lo, hi] pair") from exc
    return lo, hi


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config from nested mappings; dB/dBm fields become linear here."""
    data = dict(data)
    known = {"name", "seed", "task", "population", "scheme", "training"}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    try:
        t = dict(data.get("task", {}))
        if "feature_scale" in t:
            t["feature_scale"] = _pair(t["feature_scale"], "task.feature_scale")
        task = TaskSpec(**t)

        p = dict(data.get("population", {}))
        link = LinkBudget(
            bandwidth=float(p.pop("bandwidth_hz", 1e6)),
            noise_psd=dbm_to_watts(float(p.pop("noise_psd_dbm_hz", -174.0))),
        )
        spec_kw = {}
        if "tx_power_dbm" in p:
            spec_kw["tx_power"] = dbm_to_watts(float(p.pop("tx_power_dbm")))
        for key in ("cpu_cycles_per_batch",):
            if key in p:
                spec_kw[key] = float(p.pop(key))
        if "encode_bits" in p:
            spec_kw["encode_bits"] = int(p.pop("encode_bits"))
        for key in ("distance_km", "cpu_freq_hz"):
            if key in p:
                spec_kw[key] = _pair(p.pop(key), f"population.{key}")
        devices = p.pop("devices", None)
        count = int(p.pop("count", len(devices) if devices else 10))
        if p:
            raise ConfigError(f"unknown population keys: {sorted(p)}")
        if devices is not None:
            devices = tuple(DeviceProfile.from_dict(d) for d in devices)
            if len(devices) != count:
                raise ConfigError("population.count disagrees with the pinned device list")
        population = PopulationConfig(count=count, link=link, spec=PopulationSpec(**spec_kw), devices=devices)

        scheme = SchemeConfig(**data.get("scheme", {}))
        tr = dict(data.get("training", {}))
        if "max_time" in tr:
            tr["max_time"] = float(tr["max_time"])
        training = TrainingConfig(**tr)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(
        name=str(data.get("name", "experiment")),
        seed=int(data.get("seed", 0)),
        task=task,
        population=population,
        scheme=scheme,
        training=training,
    )


def load_config(path) -> ExperimentConfig:
    return config_from_dict(_read_yaml(Path(path)))


def population_to_yaml(profiles: Sequence[DeviceProfile]) -> str:
    """Serialise a population as a ``population.devices`` block for pinning."""
    return yaml.safe_dump({"population": {"count": len(profiles), "devices": [p.to_dict() for p in profiles]}},
                          sort_keys=False)


# ------------------------------------------------------------------- running


@dataclass(frozen=True)
class MetricsRow:
    round: int
    time: float
    loss: float
    loss_gap: float
    deadline: float
    mean_ratio: float
    delivered: int
    objective: float


@dataclass
class RunResult:
    config: ExperimentConfig
    rows: list[MetricsRow]
    outcomes: list[RoundOutcome]
    profiles: list[DeviceProfile]
    summary: dict
    calibration: dict = field(default_factory=dict)


@dataclass
class Setup:
    task: LearningTask
    partition: Partition
    profiles: list[DeviceProfile]
    link: LinkBudget
    state: TrainingState


def build_setup(config: ExperimentConfig) -> Setup:
    seed, tr = config.seed, config.training
    M = config.population.count
    task, partition = make_task(config.task, M, streams.stream(seed, streams.TASK))
    if config.population.devices is not None:
        profiles = [replace(p, data_size=s) for p, s in zip(config.population.devices, partition.sizes)]
    else:
        profiles = make_population(M, config.population.link, config.population.spec,
                                   streams.stream(seed, streams.POPULATION), data_sizes=partition.sizes)
    w0 = np.zeros(task.dim)
    stats = estimate_gradient_stats(task, partition, w0, tr.batch_size,
                                    lambda m: streams.stream(seed, streams.STATS, m), tr.stats_resamples)
    task = replace(task, sgd_variance_bound=stats.sgd_variance, grad_norm_bound=stats.grad_bound)
    state = TrainingState.initial(task, w0, tr.chi, tr.nu, G=stats.grad_bound, alpha=stats.alpha)
    return Setup(task, partition, profiles, config.population.link, state)


def _optimizer_state(config: ExperimentConfig, setup: Setup, state: TrainingState, prev_deadline) -> OptimizerState:
    tr, task = config.training, setup.task
    B = compute_bt(
        state.round, task.loss_gap(state.model), tr.epsilon,
        strong_convexity=task.strong_convexity, smoothness=task.smoothness,
        chi=tr.chi, nu=tr.nu, grad_bound=state.G_est, sgd_variance=task.sgd_variance_bound,
        data_sizes=[p.data_size for p in setup.profiles],
    )
    return OptimizerState(
        B_t=B, alpha=state.alpha_est, G=state.G_est, epsilon=tr.epsilon, prev_deadline=prev_deadline,
        alt_tolerance=config.scheme.alt_tolerance, deadline_cap=config.scheme.deadline_cap, round=state.round,
    )


def calibrate(config: ExperimentConfig, setup: Setup) -> dict:
    """Reference operating point for the fixed-parameter baselines.

    ``deadline``: the joint plan's deadline at round 1. ``ratio``: the
    common ratio minimising ``sum_m w_m^2 alpha_m / (r q_m(r))`` there.
    """
    opt = _optimizer_state(config, setup, setup.state, None)
    plan = baseline_plan("jcdo", {}, setup.profiles, setup.link, opt, setup.task.dim)
    fleet = Fleet.build(setup.profiles, setup.link, setup.task.dim)
    alpha = opt.alpha

    def cost(log_r: float) -> float:
        r = np.full(len(alpha), math.exp(log_r))
        with np.errstate(over="ignore"):
            pen = np.exp(np.log(alpha / r) + fleet.log_inv_q(r, plan.deadline))
        return float(np.sum(fleet.weight_sq * pen))

    res = minimize_scalar(cost, bounds=(math.log(1.0 / fleet.dim), 0.0), method="bounded",
                          options={"xatol": 1e-10})
    return {"deadline": plan.deadline, "ratio": float(math.exp(res.x))}


def _resolve_params(config: ExperimentConfig, setup: Setup) -> tuple[dict, dict]:
    sc = config.scheme
    calib: dict = {}
    if CALIBRATED in (sc.ratio, sc.deadline):
        calib = calibrate(config, setup)
    params: dict = {}
    if sc.ratio is not None:
        base = calib["ratio"] if sc.ratio == CALIBRATED else sc.ratio
        params["ratio"] = np.clip(np.asarray(base, dtype=float) * sc.ratio_scale, 1.0 / setup.task.dim, 1.0)
    if sc.deadline is not None:
        params["deadline"] = calib["deadline"] if sc.deadline == CALIBRATED else float(sc.deadline)
    if sc.q_target is not None:
        params["q_target"] = float(sc.q_target)
    return params, calib


def _encode(g: np.ndarray, ratio: float, rng: np.random.Generator, bits: int) -> SparseUpdate:
    if not np.any(g):
        return SparseUpdate(np.zeros(0, dtype=int), np.zeros(0), g.size, 0)
    return sparsify(g, solve_preservation_probs(g, ratio), rng, bits)


def run_experiment(config: ExperimentConfig, setup: Setup | None = None) -> RunResult:
    """Simulate until the loss gap reaches epsilon or a budget runs out.

    Deterministic given ``config.seed``: every random draw comes from a
    stream keyed by (seed, purpose, device, round).
    """
    setup = setup or build_setup(config)
    seed, tr, sc = config.seed, config.training, config.scheme
    task, partition, profiles, link = setup.task, setup.partition, setup.profiles, setup.link
    params, calib = _resolve_params(config, setup)
    state = setup.state
    rows: list[MetricsRow] = []
    outcomes: list[RoundOutcome] = []
    prev_deadline = None
    gap = task.loss_gap(state.model)
    reached = gap <= tr.epsilon
    time_to_eps = 0.0 if reached else None

    while not reached and state.round <= tr.max_rounds and state.cumulative_time < tr.max_time:
        t = state.round
        opt = _optimizer_state(config, setup, state, prev_deadline)
        plan = baseline_plan(sc.kind, params, profiles, link, opt, task.dim)
        prev_deadline = plan.deadline

        grads, updates, t_comp, t_up = [], [], [], []
        for m, dev in enumerate(profiles):
            draw = draw_channel(dev, t, streams.stream(seed, streams.CHANNEL, m, t))
            g = local_gradient(task, partition, m, state.model, tr.batch_size,
                               streams.stream(seed, streams.MINIBATCH, m, t))
            upd = _encode(g, float(plan.ratios[m]), streams.stream(seed, streams.SPARSIFY, m, t), dev.encode_bits)
            grads.append(g)
            updates.append(upd)
            t_comp.append(compute_time(dev))
            t_up.append(upload_time(upd.payload_bits, dev, draw, link))
        t_comp, t_up = np.array(t_comp), np.array(t_up)
        finish = t_comp + t_up
        if math.isinf(plan.deadline):
            delivered = list(range(len(profiles)))
            elapsed = float(finish.max())
        else:
            delivered = [m for m in range(len(profiles)) if plan.is_scheduled(m) and finish[m] <= plan.deadline]
            elapsed = plan.deadline
        if not math.isfinite(elapsed):
            raise NumericError(f"round {t}: non-finite round time (a device had zero channel gain)")

        agg = aggregate([(profiles[m].id, updates[m]) for m in delivered], plan, profiles, task.dim)
        state = apply_update(state, agg, grads, elapsed)
        loss = task.loss(state.model)
        gap = loss - task.optimum_loss
        if not math.isfinite(loss):
            raise NumericError(f"round {t}: loss became {loss}")
        rows.append(MetricsRow(t, state.cumulative_time, loss, gap, plan.deadline, plan.mean_ratio,
                               len(delivered), plan.objective_value))
        outcomes.append(RoundOutcome(
            round=t, deadline_used=plan.deadline, plan=plan,
            delivered=frozenset(profiles[m].id for m in delivered),
            compute_times=t_comp, upload_times=t_up, loss=loss, loss_gap=gap, elapsed=elapsed,
            payload_bits=np.array([u.payload_bits for u in updates]),
        ))
        if gap <= tr.epsilon:
            reached = True
            time_to_eps = state.cumulative_time

    summary = {
        "name": config.name,
        "scheme": sc.kind,
        "seed": config.seed,
        "rounds": len(rows),
        "reached": reached,
        "time_to_epsilon": time_to_eps,
        "final_loss": task.loss(state.model),
        "final_loss_gap": gap,
        "total_time": state.cumulative_time,
    }
    return RunResult(config, rows, outcomes, list(profiles), summary, calib)


def _run_one(config: ExperimentConfig, directory=None) -> dict:
    try:
        result = run_experiment(config)
        if directory is not None:
            emit_report(result, directory)
        return {**result.summary, "status": "ok"}
    except FeelsimError as exc:
        log.warning("run %s seed %s failed: %s", config.name, config.seed, exc)
        return {"name": config.name, "scheme": config.scheme.kind, "seed": config.seed, "rounds": None,
                "reached": False, "time_to_epsilon": None, "final_loss": None,
                "status": f"failed: {type(exc).__name__}: {exc}"}


@dataclass
class SuiteResult:
    runs: list[dict]
    table: list[dict]


def summarize(runs: Sequence[dict]) -> list[dict]:
    """Per-name time-to-epsilon statistics; unreached runs count as +inf."""
    names: dict[str, list[dict]] = {}
    for r in runs:
        names.setdefault(r["name"], []).append(r)
    table = []
    for name, rs in names.items():
        times = [r["time_to_epsilon"] if r["time_to_epsilon"] is not None else math.inf for r in rs]
        finite = [x for x in times if math.isfinite(x)]
        table.append({
            "name": name,
            "scheme": rs[0]["scheme"],
            "runs": len(rs),
            "reached": len(finite),
            "median": statistics.median(times) if times else math.nan,
            "mean": statistics.fmean(finite) if finite else math.inf,
            "std": statistics.pstdev(finite) if len(finite) > 1 else 0.0,
        })
    return table


def run_suite(configs: Sequence[ExperimentConfig], parallelism: int = 1, directory=None) -> SuiteResult:
    """Run independent experiments; a failing run is recorded, not raised.

    With ``directory`` set every run also writes its metrics files there.
    """
    configs = list(configs)
    one = partial(_run_one, directory=directory)
    if parallelism > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            runs = list(pool.map(one, configs))
    else:
        runs = [one(c) for c in configs]
    return SuiteResult(runs=runs, table=summarize(runs))


# ------------------------------------------------------------------ reporting


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def metrics_csv(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(r.round), _fmt(r.time), _fmt(r.loss), _fmt(r.loss_gap), _fmt(r.deadline),
                    _fmt(r.mean_ratio), _fmt(r.delivered), _fmt(r.objective)])
    return buf.getvalue()


def output_dir(default: str = "feelsim-out") -> Path:
    return Path(os.environ.get(OUTPUT_ENV, default))


def emit_report(result: RunResult, directory) -> tuple[Path, Path]:
    """Write ``<name>-seed<k>.csv`` and the matching ``.summary.json``."""
    directory = Path(directory)
    stem = f"{result.config.name}-seed{result.config.seed}"
    csv_path = directory / f"{stem}.csv"
    json_path = directory / f"{stem}.summary.json"
    try:
        directory.mkdir(parents=True, exist_ok=True)
        csv_path.write_text(metrics_csv(result.rows))
        json_path.write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report under {directory}: {exc}") from exc
    return csv_path, json_path


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ConfigError(f"{path}: unexpected header {reader.fieldnames}")
        return [MetricsRow(int(r["round"]), float(r["time"]), float(r["loss"]), float(r["loss_gap"]),
                           float(r["deadline"]), float(r["mean_ratio"]), int(r["delivered"]),
                           float(r["objective"])) for r in reader]


def load_records(directory) -> list[dict]:
    """Read every ``*.summary.json`` under ``directory`` and cross-check it
    against its CSV: one row per round, strictly increasing time."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"{directory} is not a directory")
    runs = []
    for path in sorted(directory.glob("*.summary.json")):
        summary = json.loads(path.read_text())
        csv_path = path.with_name(path.name[: -len(".summary.json")] + ".csv")
        rows = read_metrics(csv_path)
        if len(rows) != summary["rounds"]:
            raise ConfigError(f"{csv_path}: {len(rows)} rows but the summary reports {summary['rounds']} rounds")
        times = [r.time for r in rows]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError(f"{csv_path}: time column is not strictly increasing")
        runs.append(summary)
    return runs


def write_table(table: Sequence[dict], path) -> None:
    cols = ["name", "scheme", "runs", "reached", "median", "mean", "std"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in table:
            w.writerow({k: row[k] for k in cols})


def format_table(table: Sequence[dict]) -> str:
    lines = [f"{'name':<24} {'scheme':<8} {'runs':>4} {'reached':>7} {'median':>12} {'mean':>12} {'std':>12}"]
    for r in table:
        lines.append(f"{r['name']:<24} {r['scheme']:<8} {r['runs']:>4} {r['reached']:>7} "
                     f"{r['median']:>12.5g} {r['mean']:>12.5g} {r['std']:>12.5g}")
    return "\n".join(lines)
