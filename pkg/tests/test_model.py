import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nsystem.model import (
    BOUNDARY_SUM,
    Domain,
    ParameterError,
    ScaledState,
    ScaledSystem,
    StateDomainError,
    SystemParams,
    UnscaledState,
    classify_domain,
    domain_piece,
    drift_from_transitions,
    drift_scaled,
    drift_unscaled,
    make_params,
    nearest_lattice_state,
    scale_system,
    scaled_of_unscaled,
    service_rates,
    transition_rates,
    unscaled_of_scaled,
)

pos = st.floats(0.05, 20.0, allow_nan=False)


def test_make_params_examples():
    P = make_params(1, 2, 1, 1, 0.5, 1, 1)
    assert (P.lambda1, P.lambda2) == (2.0, 1.0)
    P = make_params(1, 1, 1, 1, 1, 1, 1)
    assert (P.lambda1, P.lambda2) == (2.0, 1.0)
    with pytest.raises(ParameterError):
        make_params(1, 2, 1, 1, 0.5, 1, 0)


@pytest.mark.parametrize("bad", [-1.0, 0.0, float("nan"), float("inf")])
def test_params_reject_non_positive(bad):
    with pytest.raises(ParameterError):
        make_params(1, bad, 1, 1, 0.5, 1, 1)


def test_params_immutable(P0):
    with pytest.raises(Exception):
        P0.mu11 = 3.0


@given(pos, pos, pos, pos, pos, pos, pos)
def test_lambda_identities(m11, m12, m22, p11, p12, p22, b):
    P = make_params(m11, m12, m22, p11, p12, p22, b)
    assert P.lambda2 == p22 * m22
    assert P.lambda1 == p11 * m11 + p12 * m12


def test_params_json_roundtrip(P0):
    assert SystemParams.from_json(P0.to_json()) == P0
    d = P0.to_dict()
    d["lambda1"] = 3.0
    with pytest.raises(ParameterError):
        SystemParams.from_dict(d)


@pytest.mark.parametrize("n,B1,B2", [(100, 100, 160), (25, 25, 42), (1, 1, 2)])
def test_scale_system_examples(P0, n, B1, B2):
    s = scale_system(P0, n)
    assert (s.B1, s.B2) == (B1, B2)
    assert s.Lambda1 == 2 * n and s.Lambda2 == n


def test_scale_system_adjusted(P0):
    s = scale_system(P0, 25)
    assert s.bn == pytest.approx(0.9)
    assert s.psi12n == pytest.approx(0.5)
    assert scale_system(P0, 100).bn == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        scale_system(P0, 0)


@given(pos, pos, pos, st.floats(0.1, 3), st.floats(0.1, 3), st.floats(0.1, 3), st.floats(0.1, 3),
       st.integers(4, 5000))
def test_rounding_invariants(m11, m12, m22, p11, p12, p22, b, n):
    P = make_params(m11, m12, m22, p11, p12, p22, b)
    try:
        s = scale_system(P, n)
    except ParameterError:
        return
    rn = math.sqrt(n)
    assert s.B1 == math.floor(p11 * n + 1e-9)
    assert s.B2 == math.floor(p12 * n + p22 * n + b * rn + 1e-9)
    assert s.psi11n * n == pytest.approx(s.B1, abs=1e-9)
    assert s.psi12n * n + s.psi22n * n + s.bn * rn == pytest.approx(s.B2, rel=1e-12, abs=1e-9)
    assert s.psi11n * m11 + s.psi12n * m12 == pytest.approx(P.lambda1, rel=1e-12)
    assert s.psi22n * m22 == pytest.approx(P.lambda2, rel=1e-12)
    k = s.kappa * (1 + 1e-9)
    assert abs(s.psi11n - p11) <= k / n and abs(s.psi12n - p12) <= k / n
    assert abs(s.bn - b) <= k / rn


def test_scaled_system_json(sys100):
    again = ScaledSystem.from_json(sys100.to_json())
    assert again.B2 == sys100.B2 and again.bn == sys100.bn
    assert set(json.loads(sys100.to_json())) >= {"params", "n", "B1", "B2", "Lambda1", "Lambda2",
                                                  "psi11n", "psi12n", "psi22n", "bn"}


@pytest.mark.parametrize("X,rates", [((120, 150), (120.0, 150.0)), ((0, 0), (0.0, 0.0)),
                                     ((100, 160), (100.0, 160.0))])
def test_service_rates_examples(sys100, X, rates):
    assert service_rates(sys100, UnscaledState(*X)) == rates


def test_state_maps(sys100):
    assert scaled_of_unscaled(sys100, UnscaledState(150, 100)) == ScaledState(0.0, 0.0)
    assert scaled_of_unscaled(sys100, UnscaledState(160, 110)) == ScaledState(1.0, 1.0)
    rng = np.random.default_rng(0)
    for X1, X2 in rng.integers(0, 400, size=(1000, 2)):
        back = unscaled_of_scaled(sys100, scaled_of_unscaled(sys100, UnscaledState(X1, X2)))
        assert back == pytest.approx((X1, X2), abs=1e-9)
        assert nearest_lattice_state(sys100, scaled_of_unscaled(sys100, (X1, X2))) == UnscaledState(X1, X2)


def test_unscaled_state_validation():
    with pytest.raises(StateDomainError):
        UnscaledState(-1, 0)
    with pytest.raises(StateDomainError):
        UnscaledState(1.5, 0)


def test_drift_examples(sys100):
    assert np.array_equal(drift_scaled(sys100, (0.0, 0.0)), [0.0, 0.0])
    assert drift_scaled(sys100, (0.2, -0.1)) == pytest.approx([-0.4, 0.1], abs=1e-15)
    assert drift_scaled(sys100, (0.0, -10.0))[1] == pytest.approx(10.0)
    assert drift_scaled(sys100, (sys100.x1_min, 0.0))[0] == pytest.approx(20.0)
    with pytest.raises(StateDomainError):
        drift_scaled(sys100, (0.0, -10.5))


def test_classify_examples(sys100):
    assert classify_domain(sys100, (0.2, -0.1)).label == Domain.X0
    assert classify_domain(sys100, (2.0, 0.0)).label == Domain.X1
    c = classify_domain(sys100, (0.4, 0.6))
    assert c.label is None and c.adjacent == {Domain.X0, Domain.X1}
    assert BOUNDARY_SUM in c.boundaries
    assert classify_domain(sys100, (0.0, 20.0)).label == Domain.X2
    assert classify_domain(sys100, (-8.0, 0.0)).label == Domain.X3
    assert classify_domain(sys100, (-8.0, 20.0)).label == Domain.X4


def test_transition_examples(sys100):
    tr = dict(((s.X1, s.X2), r) for s, r in transition_rates(sys100, UnscaledState(0, 0)))
    assert tr == {(1, 0): 200.0, (0, 1): 100.0}
    tr = dict(((s.X1, s.X2), r) for s, r in transition_rates(sys100, UnscaledState(120, 150)))
    assert tr == {(121, 150): 200.0, (119, 150): 120.0, (120, 151): 100.0, (120, 149): 150.0}


@pytest.mark.parametrize("n", [25, 100, 400])
def test_exact_drift_identity(P0, n):
    s = scale_system(P0, n)
    rng = np.random.default_rng(n)
    hi = int(4 * s.n + 40 * s.sqrt_n)
    for X1, X2 in rng.integers(0, hi, size=(2000, 2)):
        st_ = UnscaledState(X1, X2)
        a = drift_from_transitions(s, st_)
        b = drift_scaled(s, scaled_of_unscaled(s, st_))
        assert np.all(np.abs(a - b) <= 1e-9 * np.maximum(np.abs(a), 1.0))
        assert np.allclose(drift_unscaled(s, st_) / s.sqrt_n, a, rtol=1e-12, atol=1e-12)
        assert sum(r for _, r in transition_rates(s, st_)) <= s.rate_bound


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(-100, 100), st.floats(-100, 100),
       st.sampled_from([25, 100, 400]))
def test_lipschitz(a1, a2, b1, b2, n):
    s = scale_system(make_params(1, 2, 1, 1, 0.5, 1, 1), n)
    pts = [(max(a1, s.x1_min), max(a2, s.x2_min)), (max(b1, s.x1_min), max(b2, s.x2_min))]
    L = 2 * max(1.0, 2.0, 1.0)
    d = np.linalg.norm(drift_scaled(s, pts[0]) - drift_scaled(s, pts[1]))
    assert d <= L * np.linalg.norm(np.subtract(pts[0], pts[1])) * (1 + 1e-12) + 1e-12


@given(st.floats(-60, 60), st.floats(-60, 60), st.sampled_from([25, 100, 400]))
def test_drift_vanishes_only_at_origin(x1, x2, n):
    s = scale_system(make_params(1, 2, 1, 1, 0.5, 1, 1), n)
    x = (max(x1, s.x1_min), max(x2, s.x2_min))
    v = drift_scaled(s, x)
    if abs(x[0]) + abs(x[1]) >= 1e-9:  # below this x1 + p rounds to p
        assert np.abs(v).sum() > 0
    if x == (0.0, 0.0):
        assert np.array_equal(v, [0.0, 0.0])


@given(st.floats(-60, 60), st.floats(-60, 60), st.sampled_from([25, 100, 400]))
def test_piece_formula_matches_drift(x1, x2, n):
    s = scale_system(make_params(1, 2, 1, 1, 0.5, 1, 1), n)
    x = (max(x1, s.x1_min), max(x2, s.x2_min))
    c = classify_domain(s, x)
    assert c.adjacent, "every point lies in some domain closure"
    for m in c.adjacent:
        u = domain_piece(s, m)
        assert np.allclose(u.u @ np.array(x) + u.a, drift_scaled(s, x), atol=1e-9 * (1 + np.abs(x).sum()))


def test_interior_labels_partition_grid(sys100):
    xs = np.linspace(sys100.x1_min + 0.013, 40, 157)
    ys = np.linspace(sys100.x2_min + 0.017, 40, 149)
    counts = np.zeros(5, dtype=int)
    for a in xs:
        for b in ys:
            lab = classify_domain(sys100, (a, b)).label
            assert lab is not None
            counts[lab] += 1
    assert np.all(counts > 0)
