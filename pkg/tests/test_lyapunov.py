import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from nsystem import dfl, lyapunov as ly
from nsystem.model import (drift_scaled, lattice_states, make_params, nearest_lattice_state,
                           scale_system, scaled_of_unscaled)

P0 = make_params(1, 2, 1, 1, 0.5, 1, 1)
PEQ = make_params(1, 1, 1, 1, 1, 1, 1)
D1 = ly.make_distance(1.0)


def _point(s, r, th):
    c, sn = math.cos(th), math.sin(th)
    x = np.array([c, sn]) * r / (abs(c) + abs(sn))
    return (max(x[0], s.x1_min), max(x[1], s.x2_min))


def _ref_f(eta, C=1.0):
    a = abs(eta)
    if a <= C:
        return 0.0
    s = a - C
    return s ** 3 - s ** 4 / 2 if s <= 1 else 0.5 + (s - 1)


# ---------------------------------------------------------------- distance

def test_distance_junctions():
    for C in (0.5, 1.0, 3.0):
        d = ly.make_distance(C)
        assert (d.f(C), d.fp(C), d.fpp(C)) == (0.0, 0.0, 0.0)
        assert d.f(C + 1) == pytest.approx(0.5, abs=1e-15)
        assert d.fp(C + 1) == pytest.approx(1.0, abs=1e-15)
        assert d.fpp(C + 1) == pytest.approx(0.0, abs=1e-14)
        assert d.gap_bound() == C + 0.5


@pytest.mark.parametrize("C", [0.0, -1.0])
def test_distance_domain_error(C):
    with pytest.raises(ValueError):
        ly.make_distance(C)


@given(st.floats(-50, 50), st.sampled_from([0.5, 1.0, 2.5]))
def test_distance_properties(eta, C):
    d = ly.make_distance(C)
    assert d.f(eta) >= 0 and d.f(eta) == d.f(-eta)
    assert d.f(eta) == pytest.approx(_ref_f(eta, C), abs=1e-12)
    assert abs(d.f(eta) - abs(eta)) <= C + 0.5 + 1e-12
    assert d.fpp(eta) >= -1e-12  # convex
    if abs(eta) <= C:
        assert d.f(eta) == 0.0
    if abs(eta) >= C + 1:
        assert d.fp(eta) == math.copysign(1.0, eta) and d.fpp(eta) == 0.0
    h = 1e-6
    assert (d.f(eta + h) - d.f(eta - h)) / (2 * h) == pytest.approx(d.fp(eta), abs=1e-6)
    assert (d.fp(eta + h) - d.fp(eta - h)) / (2 * h) == pytest.approx(d.fpp(eta), abs=1e-5)


def test_gap_bound_many_points():
    rng = np.random.default_rng(0)
    x = rng.uniform(-100, 100, size=(2, 100_000))
    assert np.max(np.abs(D1.g(*x) - np.abs(x).sum(axis=0))) <= 2 * (1.0 + 0.5) + 1e-12


# ---------------------------------------------------------------- G

def test_G_zero_set(sys100):
    for x in [(0.1, 0.2), (-0.2, 0.1), (0.0, 0.0)]:
        assert ly.G_value(sys100, D1, x).G == 0.0
        assert ly.grad_G(sys100, D1, x, (1.0, 0.0)) == 0.0


def test_G2_pure_decay_oracle(sys100):
    gv = ly.G_value(sys100, D1, (0.0, -5.0))
    ref, _ = quad(lambda t: _ref_f(5.0 * math.exp(-t)), 0, 50, points=[math.log(5 / 2), math.log(5)],
                  epsabs=1e-13, epsrel=1e-13, limit=200)
    assert gv.G1 == 0.0
    assert gv.G2 == pytest.approx(ref, abs=1e-6)
    assert gv.G2 == pytest.approx(1.71084313134885, abs=1e-9)
    # brute-force Riemann sum on a fine grid
    h = 1e-5
    t = np.arange(0.5 * h, 40, h)
    assert gv.G2 == pytest.approx(D1.f(5.0 * np.exp(-t)).sum() * h, abs=1e-6)


@given(st.sampled_from([25, 100, 400]), st.floats(0.05, 60), st.floats(0, 2 * math.pi))
def test_G_nonnegative_and_split(n, r, th):
    s = scale_system(P0, n)
    gv = ly.G_value(s, D1, _point(s, r, th))
    assert gv.G >= 0 and gv.G == pytest.approx(gv.G1 + gv.G2, abs=1e-12)
    tr = ly.base_trajectory(s, D1, _point(s, r, th))
    t = np.linspace(0, tr.t_end, 2000)
    y1, y2 = tr.state(t)
    if np.max(np.maximum(np.abs(y1), np.abs(y2))) > 1.0 + 1e-6:
        assert gv.G > 0


def test_G_growth_envelope():
    c0 = 2 * (D1.C + 0.5)
    ratios = []
    for n in (25, 100, 400):
        s = scale_system(P0, n)
        for r in (5, 10, 20, 40):
            for th in np.linspace(0, 2 * math.pi, 8, endpoint=False):
                x = _point(s, r, th)
                nx = abs(x[0]) + abs(x[1])
                if nx > c0 + 1:
                    ratios.append(ly.G_value(s, D1, x).G / (nx - c0) ** 2)
    assert min(ratios) > 0


# ---------------------------------------------------------------- xi

def test_xi_x0_closed_form(sys100):
    p = ly.xi(sys100, (0.3, -0.4), (0.25, -0.75), horizon=4.0)
    t = np.linspace(0, 4, 50)
    a, b = p.state(t)
    assert np.max(np.abs(a - 0.25 * np.exp(-2 * t))) < 1e-15
    assert np.max(np.abs(b + 0.75 * np.exp(-t))) < 1e-15


@given(st.sampled_from([25, 100, 400]), st.floats(1, 80), st.floats(0, 2 * math.pi),
       st.floats(-3, 3), st.floats(-3, 3))
def test_xi_linear_and_xi2_nonexpanding(n, r, th, a, b):
    s = scale_system(P0, n)
    x = _point(s, r, th)
    tr = dfl.integrate(s, x)
    z, w = (0.3, -0.7), (-0.6, 0.4)
    pz, pw = ly.variational_path(tr, z), ly.variational_path(tr, w)
    pc = ly.variational_path(tr, (a * z[0] + b * w[0], a * z[1] + b * w[1]))
    t = np.linspace(0, tr.t_end, 300)
    for k in range(2):
        lhs = pc.state(t)[k]
        rhs = a * pz.state(t)[k] + b * pw.state(t)[k]
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * (1 + np.max(np.abs(rhs)))
    x2 = np.abs(pz.state(t)[1])
    assert np.all(np.diff(x2) <= 1e-13)
    assert pz.sup_norm <= 4.0  # fitted n-independent bound, observed <= 2


def _fd_error(s, x, z, delta, horizon):
    base = dfl.integrate(s, x, stop="horizon", horizon=horizon)
    pert = dfl.integrate(s, (x[0] + delta * z[0], x[1] + delta * z[1]), stop="horizon", horizon=horizon)
    p = ly.variational_path(base, z)
    t = np.linspace(0, horizon, 20001)
    y0, y1, q = base.state(t), pert.state(t), p.state(t)
    return max(np.max(np.abs((y1[k] - y0[k]) / delta - q[k])) for k in range(2))


def test_variational_fd_order_delta(sys100):
    rng = np.random.default_rng(11)
    for _ in range(10):
        x = _point(sys100, rng.uniform(3, 60), rng.uniform(0, 2 * math.pi))
        z = rng.normal(size=2)
        z /= np.abs(z).sum()
        if not sys100.in_state_space(x[0] + 1e-3 * z[0], x[1] + 1e-3 * z[1], tol=0.0):
            continue
        errs = [_fd_error(sys100, x, z, d, 30.0) for d in (1e-3, 1e-4, 1e-5)]
        K = errs[0] / 1e-3
        for d, e in zip((1e-4, 1e-5), errs[1:]):
            assert e <= 3 * K * d + 1e-8


# ---------------------------------------------------------------- gradients

def _sample_states(s, m, rng, rmax=50.0):
    return [_point(s, rng.uniform(0.2, rmax), rng.uniform(0, 2 * math.pi)) for _ in range(m)]


@pytest.mark.parametrize("n", [25, 100, 400])
@pytest.mark.parametrize("P", [P0, PEQ], ids=["P0", "equal"])
def test_drift_identity(n, P):
    s = scale_system(P, n)
    rng = np.random.default_rng(n)
    for x in _sample_states(s, 25, rng):
        r = ly.drift_identity_residual(s, D1, x)
        assert abs(r["residual"]) <= 1e-6 * max(1.0, abs(r["g"]))


def test_central_fd(sys100):
    rng = np.random.default_rng(5)
    d = 1e-5
    for x in _sample_states(sys100, 20, rng):
        z = rng.normal(size=2)
        z /= np.abs(z).sum()
        xp, xm = (x[0] + d * z[0], x[1] + d * z[1]), (x[0] - d * z[0], x[1] - d * z[1])
        if not (sys100.in_state_space(*xp, tol=0.0) and sys100.in_state_space(*xm, tol=0.0)):
            continue
        fd = (ly.G_value(sys100, D1, xp).G - ly.G_value(sys100, D1, xm).G) / (2 * d)
        gr = ly.grad_G(sys100, D1, x, z)
        assert abs(fd - gr) <= 1e-4 * max(1.0, abs(gr))


def test_grad_array_matches_single(sys100):
    zs = np.array([[1.0, 0.0], [0.0, -1.0], [0.5, 0.5]])
    arr = ly.grad_G(sys100, D1, (7.0, 3.0), zs)
    for z, v in zip(zs, arr):
        assert ly.grad_G(sys100, D1, (7.0, 3.0), z) == pytest.approx(v, abs=1e-12)


def test_grad_continuity(sys100):
    x, z = np.array([9.0, -2.0]), np.array([0.4, 0.6])
    g0 = ly.grad_G(sys100, D1, tuple(x), z)
    diffs = [abs(ly.grad_G(sys100, D1, tuple(x + h * np.array([0.7, -0.3])), z) - g0)
             for h in (1e-2, 1e-3, 1e-4)]
    assert diffs[2] < diffs[0] and diffs[2] < 1e-2


# ---------------------------------------------------------------- second difference

def test_second_difference_zero_set(sys100):
    sd = ly.second_difference(sys100, D1, (0.1, 0.1), (1, 0), (0, 1), 1e-4)
    assert sd.D == 0.0


def test_second_difference_split_and_halving(sys100):
    rng = np.random.default_rng(2)
    for x in _sample_states(sys100, 6, rng, rmax=30):
        prev = None
        diffs = []
        for d in (1e-3, 5e-4, 2.5e-4, 1.25e-4):
            sd = ly.second_difference(sys100, D1, x, (1.0, 0.0), (0.0, 1.0), d)
            assert sd.D == pytest.approx(sd.key1 + sd.key2, abs=1e-9)
            assert sd.D == pytest.approx((sd.grad_shifted - sd.grad_base) / d, abs=1e-5 * (1 + abs(sd.D)))
            if prev is not None:
                diffs.append(abs(sd.D - prev))
            prev = sd.D
        assert diffs[-1] <= diffs[0] + 1e-6


def test_sweep_record_matches_direct(sys100):
    rec = ly.sweep_record(sys100, D1, (12.0, 4.0))
    assert rec["gradG"]["+e1"] == pytest.approx(ly.grad_G(sys100, D1, (12.0, 4.0), (1, 0)), abs=1e-12)
    assert rec["gradG"]["-e2"] == -rec["gradG"]["+e2"]
    sd = ly.second_difference(sys100, D1, (12.0, 4.0), (1, 0), (0, -1), 1e-4)
    assert rec["D"]["+e1|-e2"] == pytest.approx(sd.D, rel=1e-6, abs=1e-8)
    assert abs(rec["drift_residual"]) <= 1e-6 * max(1, rec["g"])
    # on the lower edge of the space one shift direction is skipped
    edge = ly.sweep_record(sys100, D1, (sys100.x1_min, 3.0))
    assert "-e1" in edge["D_skipped"]


# ---------------------------------------------------------------- generator drift

def test_generator_drift_far_and_origin():
    s = scale_system(P0, 100)
    far = nearest_lattice_state(s, (40.0, 0.0))
    assert ly.generator_drift(s, D1, far)["AG"] < 0
    rng = np.random.default_rng(4)
    pts = [ly.generator_drift(s, D1, nearest_lattice_state(s, x)) for x in _sample_states(s, 30, rng, 40)]
    origin = ly.generator_drift(s, D1, nearest_lattice_state(s, (0.0, 0.0)))
    pts.append(origin)
    eps, kappa = ly.fit_drift_inequality([p["g"] for p in pts], [p["AG"] for p in pts])
    assert eps > 0 and math.isfinite(kappa)
    assert abs(origin["AG"]) <= kappa
    for p in pts:
        assert p["AG"] <= -eps * p["g"] + kappa + 1e-12


def test_fit_drift_inequality_simple():
    g = np.array([0.0, 10.0, 20.0])
    AG = np.array([1.0, -4.0, -9.0])
    eps, kappa = ly.fit_drift_inequality(g, AG)
    assert np.all(AG <= -eps * g + kappa + 1e-12)
    with pytest.raises(ValueError):
        ly.fit_drift_inequality([], [])


# ---------------------------------------------------------------- switching-point perturbation

def _far_switches(s, x, C7):
    tr = dfl.integrate(s, x)
    return np.array([p for p in tr.switching_points if sum(abs(v) for v in tr.state(p)) >= C7])


def test_switching_perturbation_shrinks_with_C7(sys400):
    s, d = sys400, 1e-6
    out = {}
    for C7 in (5, 10, 20):
        rng = np.random.default_rng(1)
        eps = 0.0
        for _ in range(200):
            x = np.array(_point(s, rng.uniform(30, 100), rng.uniform(0, 2 * math.pi)))
            x = np.maximum(x, [s.x1_min + 1e-3, s.x2_min + 1e-3])
            z = rng.normal(size=2)
            z /= np.abs(z).sum()
            a, b = _far_switches(s, x, C7), _far_switches(s, x + d * z, C7)
            if b.size:
                assert a.size
                eps = max(eps, max(np.min(np.abs(a - q)) for q in b) / d)
        out[C7] = eps
    assert out[20] <= out[10] <= out[5] and out[20] < out[5]
