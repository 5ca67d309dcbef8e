import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_schedule
from vesmc.errors import ConfigurationError, DegenerateScheduleError, IndexOrderError, InvariantViolation
from vesmc.schedule import (
    NoiseSchedule,
    bridge_mean,
    build_geometric_schedule,
    build_power_schedule,
    eta_ddpm_matching,
    inference_marginals,
    loss_weights,
    schedule_from_dict,
)


@pytest.mark.parametrize("K, smin, smax", [(0, 0.1, 1.0), (1, 0.5, 0.5), (3, 2.0, 1.0), (3, -1.0, 1.0), (3, 0.0, 1.0)])
def test_invalid_geometric_configurations(K, smin, smax):
    with pytest.raises(ConfigurationError):
        build_geometric_schedule(K, smin, smax)


def test_two_point_grid():
    s = build_geometric_schedule(2, 1.0, 2.0)
    np.testing.assert_allclose(s.upsilon, [0, 1, 2], rtol=0, atol=1e-15)
    np.testing.assert_allclose(s.rho2[1:], [1, 3], rtol=1e-15)
    assert s.eta2[1] == pytest.approx(0.75, rel=1e-15)


def test_wide_grid_endpoints_and_constant_ratio():
    s = build_geometric_schedule(64, 2e-4, 80.0)
    assert s.upsilon[64] == 80.0
    assert s.upsilon[1] == 2e-4
    ratios = s.upsilon[2:] / s.upsilon[1:-1]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)
    assert np.all(s.eta > 0)


def test_single_step_schedule_uses_sigma_min_for_last_std():
    s = build_geometric_schedule(1, 0.01, 5.0)
    assert s.K == 1
    assert s.upsilon[1] == 5.0
    assert s.eta[0] == pytest.approx(0.01)


@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_telescoping_and_eta_bound(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 80))
    lo = float(np.exp(rng.uniform(-9, 0)))
    s = build_geometric_schedule(K, lo, lo * float(np.exp(rng.uniform(0.5, 12))))
    cum = np.cumsum(s.rho2)
    np.testing.assert_allclose(cum[1:], s.upsilon2[1:], rtol=1e-12)
    assert np.all(s.eta2[1:] <= s.upsilon2[1:K])
    assert s.eta2[0] == s.eta2[1]
    assert np.all(np.diff(s.upsilon) > 0)


def test_matching_rule_reproduces_forward_bridge():
    s = build_power_schedule(30, 2e-3, 50.0)
    for k in range(1, s.K):
        # forward bridge: mean x0 + (u_k^2/u_{k+1}^2)(x_{k+1} - x0), variance (u_k^2/u_{k+1}^2) rho_{k+1}^2
        ratio = s.upsilon2[k] / s.upsilon2[k + 1]
        assert s.coefficient(k + 1) == pytest.approx(ratio, rel=1e-12)
        assert s.eta2[k] == pytest.approx(ratio * s.rho2[k + 1], rel=1e-12)
    np.testing.assert_allclose(eta_ddpm_matching(s), s.eta, rtol=1e-15)


def test_bridge_mean_examples():
    s = NoiseSchedule.from_upsilon([0.0, 1.0, 2.0], eta=[0.1, 0.0])
    assert bridge_mean(0.0, 2.0, 2, s) == pytest.approx(1.0)
    full = NoiseSchedule.from_upsilon([0.0, 1.0, 2.0], eta=[0.1, 1.0])
    x0 = np.array([[0.3, -1.2]])
    np.testing.assert_array_equal(bridge_mean(x0, np.array([[5.0, 7.0]]), 2, full), x0)


def test_bridge_mean_rejects_eta_above_upsilon():
    s = build_geometric_schedule(4, 0.1, 1.0)
    with pytest.raises(InvariantViolation):
        bridge_mean(0.0, 1.0, 1, s)
    with pytest.raises(IndexOrderError):
        bridge_mean(0.0, 1.0, 5, s)


def test_schedule_construction_rejects_eta_above_upsilon():
    with pytest.raises(InvariantViolation):
        NoiseSchedule.from_upsilon([0.0, 1.0, 2.0], eta=[0.1, 1.5])


def test_inference_marginals_random_schedules():
    rng = np.random.default_rng(0)
    for _ in range(20):
        s = random_schedule(rng)
        mean, var = inference_marginals(s, offset=0.0)
        np.testing.assert_allclose(var[1:], s.upsilon2[1:], rtol=1e-10)
        np.testing.assert_array_equal(mean, 0.0)


def test_loss_weight_examples():
    s = NoiseSchedule.from_upsilon([0.0, 1.0, 2.0], eta=np.sqrt([0.5, 0.75]))
    g2 = loss_weights(s)
    assert np.isnan(g2[0])
    assert g2[1] == pytest.approx(1 / 0.5)
    assert g2[2] == pytest.approx((1 / 0.75) * (1 - np.sqrt((1 - 0.75) / 4)) ** 2, rel=1e-14)
    # eta_{k-1}^2 = upsilon_{k-1}^2 makes the bracket 1
    full = NoiseSchedule.from_upsilon([0.0, 1.0, 2.0, 3.0], eta=[0.2, 1.0, 2.0])
    np.testing.assert_allclose(loss_weights(full)[2:], 1 / full.upsilon2[1:3], rtol=1e-14)


def test_loss_weights_reject_zero_eta():
    s = NoiseSchedule.from_upsilon([0.0, 1.0, 2.0], eta=[0.1, 0.0])
    with pytest.raises(DegenerateScheduleError):
        loss_weights(s)


def test_zero_last_std_rejected():
    with pytest.raises(InvariantViolation):
        NoiseSchedule.from_upsilon([0.0, 1.0, 2.0], eta=[0.0, 0.5])


def test_schedule_is_read_only():
    s = build_geometric_schedule(5, 0.1, 1.0)
    with pytest.raises(ValueError):
        s.upsilon2[1] = 3.0


@pytest.mark.parametrize("builder", [build_geometric_schedule, build_power_schedule])
def test_json_round_trip(builder):
    s = builder(20, 1e-3, 40.0)
    back = schedule_from_dict(json.loads(s.to_json()))
    np.testing.assert_array_equal(back.upsilon2, s.upsilon2)
    np.testing.assert_array_equal(back.eta2, s.eta2)


def test_explicit_eta_and_grid_round_trip():
    s = NoiseSchedule.from_upsilon([0.0, 0.5, 1.0, 3.0], eta=[0.1, 0.2, 0.3])
    back = schedule_from_dict(json.loads(s.to_json()))
    np.testing.assert_allclose(back.upsilon2, s.upsilon2, rtol=1e-15)
    np.testing.assert_allclose(back.eta2, s.eta2, rtol=1e-15)


def test_explicit_eta_rule_on_geometric_grid():
    cfg = {"K": 3, "sigma_min": 0.1, "sigma_max": 1.0, "grid": "geometric", "eta_rule": [0.05, 0.05, 0.1]}
    assert schedule_from_dict(cfg).eta[2] == pytest.approx(0.1)


@pytest.mark.parametrize("cfg", [{"grid": "cosine", "K": 3, "sigma_min": 0.1, "sigma_max": 1.0},
                                 {"grid": "geometric", "K": 3},
                                 {"K": 3, "sigma_min": 0.1, "sigma_max": 1.0, "eta_rule": "ddim"}])
def test_bad_schedule_dicts(cfg):
    with pytest.raises(ConfigurationError):
        schedule_from_dict(cfg)
