import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

from nsystem.stats import (Interval, Marginal, derive_seed, kendall_trend, ks_critical_two_sample,
                           ks_distance, ks_normal, ks_to_cdf, mean_ci, ratio_ci, total_variation)

weights = st.lists(st.floats(0.01, 10), min_size=2, max_size=30)


@given(weights)
def test_identical_marginals_have_zero_ks(w):
    m = Marginal.from_weights(np.arange(len(w)), w)
    assert ks_distance(m, m) == 0.0
    assert abs(m.weights.sum() - 1) <= 1e-12
    assert Marginal.from_dict(m.to_dict()).cdf(len(w)) == pytest.approx(1.0)


def test_marginal_rejects_empty():
    with pytest.raises(ValueError):
        Marginal.from_weights([0.0, 1.0], [0.0, 0.0])


def test_ks_against_scipy():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=500), rng.normal(0.2, 1, size=700)
    ma = Marginal.from_weights(a, np.ones_like(a))
    mb = Marginal.from_weights(b, np.ones_like(b))
    assert ks_distance(ma, mb) == pytest.approx(sps.ks_2samp(a, b).statistic, abs=1e-12)
    assert ks_normal(ma) == pytest.approx(sps.kstest(a, "norm").statistic, abs=1e-12)


def test_ks_to_cdf_single_atom():
    m = Marginal.from_weights([0.0], [1.0])
    assert ks_to_cdf(m, lambda x: sps.norm.cdf(x)) == pytest.approx(0.5)


def test_ks_critical_value():
    assert ks_critical_two_sample(1e4, 1e4) == pytest.approx(1.358 * math.sqrt(2e-4), rel=1e-3)


def test_total_variation_pads():
    assert total_variation([0.5, 0.5], [0.5, 0.5, 0.0]) == 0.0
    assert total_variation([1.0], [0.0, 1.0]) == 1.0


def test_mean_ci_and_ratio():
    iv = mean_ci([1.0, 2.0, 3.0, 4.0])
    assert iv.estimate == 2.5
    assert iv.half_width == pytest.approx(sps.t.ppf(0.975, 3) * np.std([1, 2, 3, 4], ddof=1) / 2)
    assert iv.contains(2.5) and not iv.contains(10)
    with pytest.raises(ValueError):
        mean_ci([1.0])
    r = ratio_ci([2.0, 4.0, 6.0], [1.0, 2.0, 3.0])
    assert r.estimate == 2.0 and r.half_width == pytest.approx(0.0, abs=1e-12)
    assert Interval(1.0, 0.5).to_dict() == {"estimate": 1.0, "half_width": 0.5}


def test_mean_ci_coverage():
    rng = np.random.default_rng(1)
    hits = sum(mean_ci(rng.normal(size=20)).contains(0.0) for _ in range(2000))
    assert 0.93 <= hits / 2000 <= 0.97


def test_kendall():
    assert kendall_trend([1, 2], [1, 2])["p_value"] == 1.0
    up = kendall_trend([1, 2, 3, 4, 5, 6], [1, 2, 3, 4, 5, 6])
    assert up["tau"] == pytest.approx(1.0) and up["p_value"] < 0.05
    down = kendall_trend([1, 2, 3, 4], [4, 3, 2, 1])
    assert down["p_value"] > 0.5


def test_derive_seed():
    a = derive_seed(7, "sim", 1)
    assert a == derive_seed(7, "sim", 1)
    assert len({a, derive_seed(7, "sim", 2), derive_seed(7, "sde", 1), derive_seed(8, "sim", 1)}) == 4
    assert 0 <= a < 2 ** 64
