"""The oracles themselves, checked against hand-derived values."""
import math

import numpy as np
import pytest

from feelsim import oracles


def test_preservation_worked_example():
    lam = oracles.preservation_lambda([4.0, 2.0, 1.0, 1.0], 0.5)
    assert lam == pytest.approx(4.0, rel=1e-12)
    assert oracles.variance_by_definition([4, 2, 1, 1], [1, 0.5, 0.25, 0.25]) == pytest.approx(10.0)
    assert oracles.variance_by_definition([1, 1, 1, 1], [0.25] * 4) == pytest.approx(12.0)


def test_lambert_fixed_point():
    assert oracles.lambert_w_fixed_point(1.0) == pytest.approx(0.5671432904097838, abs=1e-15)
    assert oracles.lambert_w_fixed_point(math.e) == pytest.approx(1.0, abs=1e-12)


def test_golden_ratio_hand_example():
    # snr / ln 2 = 2 and slack / load = 0.3 put the minimiser at r = 0.3
    snr, load = 2 * oracles.LN2, 1.0
    assert oracles.golden_ratio(snr, load, 0.3, 10_000) == pytest.approx(0.3, rel=1e-6)
    assert oracles.golden_ratio(snr, load, 100.0, 10_000) == 1.0
    assert oracles.golden_ratio(snr, load, 1e-9, 10_000) == pytest.approx(1e-4)


def test_bt_and_path_loss():
    assert oracles.bt_by_hand(1, 1.0, 0.1, 1.0, 1.0, 10.0, 100.0, 1.0, 0.5, [1] * 10) == pytest.approx(25.502)
    assert oracles.path_loss(1.0) == 128.1
    assert oracles.path_loss(0.1) == pytest.approx(90.5)


def test_grid_deadline_finds_known_minimum():
    # one device, zero compute time, q = 1 at every deadline: objective is linear so the grid picks its left end
    t, step = oracles.grid_deadline([1.0], [1e300], [1e-3], [0.0], [1.0], 1.0, [1.0], cap=1.0, points=1001)
    assert t == pytest.approx(1e-3 * (1 + 1e-6)) and step == pytest.approx((1.0 - 1e-3 * (1 + 1e-6)) / 1000)


def test_success_frequency_without_payload_is_certain():
    rng = np.random.default_rng(0)
    assert oracles.success_frequency(1.0, 1.0, 1.0, 1e6, 0.0, 1e-3, 32, np.zeros(100, int), rng) == 1.0
    assert oracles.success_frequency(1.0, 1.0, 1.0, 1e6, 2e-3, 1e-3, 32, np.ones(100, int), rng) == 0.0
