import json
import math
from dataclasses import replace

import numpy as np
import pytest

from feelsim import streams
from feelsim.errors import ConfigError
from feelsim.experiment import (
    CSV_HEADER,
    ExperimentConfig,
    PopulationConfig,
    SchemeConfig,
    TrainingConfig,
    build_setup,
    config_from_dict,
    emit_report,
    load_config,
    load_records,
    metrics_csv,
    population_to_yaml,
    read_metrics,
    run_experiment,
    run_suite,
)
from feelsim.fixtures import STANDARD_SCHEMES, standard_config
from feelsim.tasks import TaskSpec


def small(scheme="jcdo", seed=0, rounds=15, **scheme_kw):
    cfg = standard_config("jcdo", seed)
    return replace(
        cfg,
        name=f"small-{scheme}",
        task=replace(cfg.task, dim=20, samples_per_device=60),
        population=replace(cfg.population, count=4),
        scheme=SchemeConfig(**{**STANDARD_SCHEMES.get(scheme, {"kind": scheme}), **scheme_kw}),
        training=replace(cfg.training, max_rounds=rounds, stats_resamples=20),
    )


# ------------------------------------------------------------------ configs


def test_yaml_files_match_the_python_fixture():
    for name in STANDARD_SCHEMES:
        assert load_config(f"configs/standard/{name}.yaml") == standard_config(name)


def test_config_from_dict_converts_units():
    cfg = config_from_dict({"population": {"count": 2, "tx_power_dbm": 30, "noise_psd_dbm_hz": -174,
                                           "distance_km": [0.1, 0.2]},
                            "scheme": {"kind": "co", "deadline": 0.5}})
    assert cfg.population.spec.tx_power == pytest.approx(1.0)
    assert cfg.population.link.noise_psd == pytest.approx(10 ** (-20.4))
    assert cfg.population.spec.distance_km == (0.1, 0.2)
    assert cfg.scheme.deadline == 0.5


@pytest.mark.parametrize("data, match", [
    ({"bogus": 1}, "unknown top-level"),
    ({"population": {"colour": "red"}}, "unknown population"),
    ({"task": {"dims": 3}}, "dims"),
    ({"scheme": {"kind": "warp"}}, "scheme must be"),
    ({"scheme": {"kind": "fixed_r", "ratio": 0.1}}, "needs 'deadline'"),
    ({"population": {"distance_km": 3}}, "pair"),
])
def test_config_errors(data, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(data)


def test_include_merges_and_detects_cycles(tmp_path):
    (tmp_path / "base.yaml").write_text("seed: 4\ntraining:\n  chi: 12\n  nu: 50\n")
    (tmp_path / "exp.yaml").write_text("include: base.yaml\nname: e\ntraining:\n  nu: 200\n")
    cfg = load_config(tmp_path / "exp.yaml")
    assert (cfg.seed, cfg.training.chi, cfg.training.nu, cfg.name) == (4, 12, 200, "e")
    (tmp_path / "a.yaml").write_text("include: b.yaml\n")
    (tmp_path / "b.yaml").write_text("include: a.yaml\n")
    with pytest.raises(ConfigError, match="cycle"):
        load_config(tmp_path / "a.yaml")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")


def test_learning_rate_conditions_are_validated():
    cfg = small()
    with pytest.raises(ConfigError, match="raise chi"):
        build_setup(replace(cfg, training=replace(cfg.training, chi=1e-3)))
    with pytest.raises(ConfigError, match="raise nu"):
        build_setup(replace(cfg, training=replace(cfg.training, nu=0.0)))


def test_pinned_population_round_trip(tmp_path):
    cfg = small()
    profiles = build_setup(cfg).profiles
    import yaml

    block = yaml.safe_load(population_to_yaml(profiles))
    pinned = config_from_dict({"population": {**block["population"]}})
    assert list(pinned.population.devices) == profiles
    with pytest.raises(ConfigError, match="disagrees"):
        config_from_dict({"population": {**block["population"], "count": 9}})
    # pinning the drawn devices changes nothing about the run
    again = replace(cfg, population=replace(cfg.population, devices=tuple(profiles)))
    assert metrics_csv(run_experiment(again).rows) == metrics_csv(run_experiment(cfg).rows)


# ----------------------------------------------------------------- running


def test_same_seed_same_bytes(tmp_path):
    cfg = small()
    a = emit_report(run_experiment(cfg), tmp_path / "a")
    b = emit_report(run_experiment(cfg), tmp_path / "b")
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()
    other = emit_report(run_experiment(cfg.with_seed(1)), tmp_path / "c")
    assert other[0].read_bytes() != a[0].read_bytes()


def test_rows_and_clock_for_deadline_schemes():
    res = run_experiment(small("jcdo", rounds=20))
    assert [r.round for r in res.rows] == list(range(1, len(res.rows) + 1))
    times = [r.time for r in res.rows]
    assert all(b > a for a, b in zip(times, times[1:]))
    total = 0.0
    for o, row in zip(res.outcomes, res.rows):
        total += o.deadline_used
        assert row.time == total
        finish = o.compute_times + o.upload_times
        assert o.delivered == frozenset(i for i in range(4) if finish[i] <= o.deadline_used)
        assert row.delivered == len(o.delivered)


def test_clock_for_fedavg_is_slowest_device():
    res = run_experiment(small("fedavg", rounds=10))
    total = 0.0
    for o, row in zip(res.outcomes, res.rows):
        assert math.isinf(o.deadline_used) and len(o.delivered) == 4
        total += float(np.max(o.compute_times + o.upload_times))
        assert row.time == total
        assert row.mean_ratio == 1.0
        assert np.all(o.payload_bits == 32 * 20)


def test_single_device_fedavg_is_gradient_descent():
    cfg = small("fedavg", rounds=25)
    cfg = replace(cfg, population=replace(cfg.population, count=1),
                  training=replace(cfg.training, batch_size=None, chi=20.0, nu=200.0))
    setup = build_setup(cfg)
    res = run_experiment(cfg, setup)
    task, w = setup.task, np.zeros(setup.task.dim)
    for t, row in enumerate(res.rows, start=1):
        w = w - cfg.training.chi / (t + cfg.training.nu) * task.grad(w)
        assert row.loss == task.loss(w)


def test_paired_channels_across_schemes():
    a = run_experiment(small("jcdo", rounds=5))
    b = run_experiment(small("co", rounds=5))
    assert a.profiles == b.profiles
    np.testing.assert_array_equal(a.outcomes[0].compute_times, b.outcomes[0].compute_times)
    # channel draws are keyed by (seed, device, round), not by scheme
    from feelsim.channel import draw_channel

    d1 = draw_channel(a.profiles[0], 3, streams.stream(0, streams.CHANNEL, 0, 3))
    d2 = draw_channel(b.profiles[0], 3, streams.stream(0, streams.CHANNEL, 0, 3))
    assert d1 == d2


def test_stops_at_epsilon_and_reports_time():
    cfg = small("jcdo", rounds=3000)
    cfg = replace(cfg, training=replace(cfg.training, epsilon=0.05))
    res = run_experiment(cfg)
    assert res.summary["reached"]
    assert res.rows[-1].loss_gap <= 0.05 < res.rows[-2].loss_gap
    assert res.summary["time_to_epsilon"] == res.rows[-1].time


def test_zero_rounds_gives_header_only(tmp_path):
    cfg = small(rounds=0)
    res = run_experiment(cfg)
    csv_path, json_path = emit_report(res, tmp_path)
    assert csv_path.read_text() == ",".join(CSV_HEADER) + "\n"
    summary = json.loads(json_path.read_text())
    assert summary["rounds"] == 0 and summary["time_to_epsilon"] is None
    assert {"scheme", "seed", "rounds", "time_to_epsilon", "final_loss"} <= set(summary)


def test_report_round_trip(tmp_path):
    res = run_experiment(small(rounds=7))
    csv_path, _ = emit_report(res, tmp_path)
    assert read_metrics(csv_path) == res.rows
    assert len(csv_path.read_text().splitlines()) == 8
    assert load_records(tmp_path) == [json.loads(json.dumps(res.summary))]


def test_report_io_error_names_the_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="file"):
        emit_report(run_experiment(small(rounds=1)), blocker / "sub")


def test_load_records_rejects_inconsistent_files(tmp_path):
    res = run_experiment(small(rounds=3))
    csv_path, json_path = emit_report(res, tmp_path)
    lines = csv_path.read_text().splitlines()
    csv_path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ConfigError, match="rows"):
        load_records(tmp_path)
    csv_path.write_text("\n".join([lines[0], lines[2], lines[1], lines[3]]) + "\n")
    with pytest.raises(ConfigError, match="increasing"):
        load_records(tmp_path)
    with pytest.raises(ConfigError):
        load_records(tmp_path / "nope")


# ------------------------------------------------------------------- suites


def test_empty_suite():
    out = run_suite([])
    assert out.runs == [] and out.table == []


def test_suite_composition():
    configs = [small(s, seed=k, rounds=4) for s in ("jcdo", "fedavg") for k in range(5)]
    out = run_suite(configs)
    assert len(out.runs) == 10
    assert [r["runs"] for r in out.table] == [5, 5]
    for cfg, run in zip(configs, out.runs):
        alone = run_experiment(cfg).summary
        assert {k: run[k] for k in alone} == alone


def test_suite_parallel_matches_serial(tmp_path):
    configs = [small("jcdo", seed=k, rounds=3) for k in range(3)]
    assert run_suite(configs, parallelism=2, directory=tmp_path).runs == run_suite(configs).runs
    assert len(load_records(tmp_path)) == 3


def test_suite_records_failures_without_stopping():
    good = small("jcdo", rounds=2)
    bad = small("fixed_r", rounds=2, ratio=0.5, deadline=1e-9)
    out = run_suite([bad, good])
    assert out.runs[0]["status"].startswith("failed: InfeasibleDeadlineError") or \
        out.runs[0]["status"].startswith("failed: InfeasiblePlanError")
    assert out.runs[1]["status"] == "ok"
    assert out.table[0]["reached"] == 0
