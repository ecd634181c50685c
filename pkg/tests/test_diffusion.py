import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

from nsystem import diffusion
from nsystem.ctmc import ConfigError
from nsystem.model import drift_scaled, make_params, scale_system
from nsystem.stats import ks_critical_two_sample, ks_distance, ks_normal

P0 = make_params(1, 2, 1, 1, 0.5, 1, 1)
FIELD = diffusion.limit_field(P0)
coord = st.floats(-100, 100)


def test_coefficients():
    assert FIELD.sigma1 == 2.0
    assert FIELD.sigma2 == pytest.approx(math.sqrt(2.0), abs=1e-15)
    assert FIELD.x2_stationary_sd == pytest.approx(1.0, abs=1e-15)
    assert FIELD.drift(0.0, 0.0) == (0.0, 0.0)


def test_prelimit_field_equals_limit_on_compact(sys400):
    g = np.linspace(-5, 5, 81)
    worst = 0.0
    for a in g:
        for b in g:
            if abs(a) + abs(b) <= 5:
                v = drift_scaled(sys400, (a, b))
                w = FIELD.drift(a, b)
                worst = max(worst, abs(v[0] - w[0]), abs(v[1] - w[1]))
    assert worst == 0.0


@given(coord, coord, coord, coord)
def test_lipschitz(a, b, c, d):
    v = np.array(FIELD.drift(a, b), dtype=float)
    w = np.array(FIELD.drift(c, d), dtype=float)
    assert np.abs(v - w).sum() <= FIELD.lipschitz * (abs(a - c) + abs(b - d)) * (1 + 1e-12) + 1e-12


@given(coord, coord)
def test_inward_outside_upper_quadrant(a, b):
    # v.x < 0 for large x except where x1 > 0 and x2 > b (see the counterexample below)
    if abs(a) + abs(b) < 2 * (FIELD.b + 1) or (a > 0 and b > FIELD.b):
        return
    v1, v2 = FIELD.drift(a, b)
    assert v1 * a + v2 * b < 0


def test_inward_fails_in_upper_quadrant():
    v1, v2 = FIELD.drift(10.0, 10.0)
    assert v1 * 10 + v2 * 10 > 0  # x1 is pushed up while x2 > b, yet x2 decays
    # the flow still returns: the radial component turns negative once x2 has decayed
    x = np.array([10.0, 10.0])
    for _ in range(20000):
        x = x + 1e-3 * np.array(FIELD.drift(*x))
    assert np.abs(x).sum() < 20.0


def test_config_validation():
    with pytest.raises(ConfigError):
        diffusion.SdeConfig(seed=1, dt=0.0)
    with pytest.raises(ConfigError):
        diffusion.SdeConfig(seed=1, horizon=10, burn_in=10)
    cfg = diffusion.SdeConfig(seed=3, dt=0.01, horizon=100, burn_in=1, initial=(1.0, 2.0))
    assert diffusion.SdeConfig.from_dict(cfg.to_dict()) == cfg


def test_blow_up_detected():
    with pytest.raises(diffusion.BlowUpError):
        diffusion.simulate_sde(FIELD, diffusion.SdeConfig(seed=1, dt=0.01, horizon=50, burn_in=1,
                                                          initial=(2e6, 0.0)))


@pytest.fixture(scope="module")
def run_a():
    return diffusion.simulate_sde(FIELD, diffusion.SdeConfig(seed=101, dt=1e-2, horizon=4e4, burn_in=50))


@pytest.fixture(scope="module")
def run_b():
    return diffusion.simulate_sde(FIELD, diffusion.SdeConfig(seed=202, dt=1e-2, horizon=4e4, burn_in=50))


def test_deterministic(run_a):
    again = diffusion.simulate_sde(FIELD, diffusion.SdeConfig(seed=101, dt=1e-2, horizon=4e4, burn_in=50))
    assert np.array_equal(again.batch_means, run_a.batch_means)
    assert np.array_equal(again.marginal2.weights, run_a.marginal2.weights)


def test_ou_component(run_a):
    m = run_a.moments["mean_x2"]
    se = m.half_width / sps.t.ppf(0.975, len(run_a.batch_means) - 1)
    assert abs(m.estimate) <= 3 * se
    assert run_a.moments["var_x2"].estimate == pytest.approx(1.0, rel=0.03)
    assert ks_normal(run_a.marginal2, 0.0, 1.0) <= 0.02
    assert abs(run_a.marginal1.weights.sum() - 1) <= 1e-12


def _n_eff(est, key):
    se = est.moments[f"mean_{key}"].half_width / sps.t.ppf(0.975, len(est.batch_means) - 1)
    return max(est.moments[f"var_{key}"].estimate / se ** 2, 1.0)


def test_two_seed_stability(run_a, run_b):
    for k, key in ((1, "x1"), (2, "x2")):
        a, b = getattr(run_a, f"marginal{k}"), getattr(run_b, f"marginal{k}")
        assert ks_distance(a, b) < ks_critical_two_sample(_n_eff(run_a, key), _n_eff(run_b, key))


def test_step_halving():
    out = diffusion.step_halving_shift(FIELD, diffusion.SdeConfig(seed=7, dt=2e-2, horizon=2e4, burn_in=50))
    assert out["mean_x1"]["ok"] and out["mean_x2"]["ok"]
