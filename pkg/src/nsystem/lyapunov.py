"""Smoothed distance, the Lyapunov functional G and its derivatives.

``G(x)`` integrates the smoothed distance ``g`` along the DFL started at ``x``.
All integrals are taken with a vectorized adaptive Gauss-Legendre rule on
panels cut at the trajectory's segment boundaries and at the times a
coordinate crosses one of the kinks ``+-C``, ``+-(C+1)`` of ``f``; on every
panel the integrand is analytic. The integration stops once the trajectory is
inside the alpha-ball with ``max_i |y_i| <= C``, after which ``g`` vanishes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import linprog

from . import dfl
from .model import ScaledState, ScaledSystem, drift_scaled, scaled_of_unscaled, transition_rates

GL_ORDER = 10
_GL_X, _GL_W = leggauss(GL_ORDER)


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach its tolerance."""


@dataclass(frozen=True)
class SmoothDistance:
    """Even C2 convex function ``f`` with flat zone ``[-C, C]`` and unit slope past ``C+1``.

    On the ramp ``|eta| = C + s``, ``0 <= s <= 1``::

        f = s^3 - s^4/2,   f' = 3 s^2 - 2 s^3,   f'' = 6 s - 6 s^2
    """

    C: float

    def __post_init__(self):
        if not (self.C > 0 and math.isfinite(self.C)):
            raise ValueError(f"flat-zone half-width must be positive, got {self.C}")

    @property
    def kinks(self) -> tuple:
        C = self.C
        return (-C - 1.0, -C, C, C + 1.0)

    def f(self, eta):
        s = np.abs(eta) - self.C
        ramp = s * s * s * (1.0 - 0.5 * s)
        out = np.where(s <= 0.0, 0.0, np.where(s < 1.0, ramp, s - 0.5))
        return out if np.ndim(out) else float(out)

    def fp(self, eta):
        s = np.abs(eta) - self.C
        ramp = s * s * (3.0 - 2.0 * s)
        out = np.sign(eta) * np.where(s <= 0.0, 0.0, np.where(s < 1.0, ramp, 1.0))
        return out if np.ndim(out) else float(out)

    def fpp(self, eta):
        s = np.abs(eta) - self.C
        out = np.where((s > 0.0) & (s < 1.0), 6.0 * s * (1.0 - s), 0.0)
        return out if np.ndim(out) else float(out)

    def g(self, x1, x2):
        return self.f(x1) + self.f(x2)

    def gap_bound(self) -> float:
        """``sup |f(eta) - |eta||``, attained for ``|eta| >= C + 1``."""
        return self.C + 0.5


def make_distance(C: float = 1.0) -> SmoothDistance:
    return SmoothDistance(float(C))


@dataclass(frozen=True)
class LyapunovConfig:
    C: float = 1.0
    atol: float = 1e-10
    rtol: float = 1e-13
    delta: float = 1e-4
    alpha: float | None = None

    def distance(self) -> SmoothDistance:
        return make_distance(self.C)

    def to_dict(self) -> dict:
        return {"C": self.C, "atol": self.atol, "rtol": self.rtol, "delta": self.delta,
                "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d: dict) -> "LyapunovConfig":
        return cls(**{k: d[k] for k in ("C", "atol", "rtol", "delta", "alpha") if k in d})


# ---------------------------------------------------------------------------
# quadrature


def _gl(func, a, b):
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    t = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    vals = np.atleast_2d(func(t)).reshape(-1, a.size, GL_ORDER)
    return (vals @ _GL_W) * half


def integrate_panels(func, edges, atol: float = 1e-10, rtol: float = 1e-13,
                     max_rounds: int = 60):
    """Integrate ``func`` over the union of panels ``[edges[k], edges[k+1]]``.

    ``func`` maps a 1-d time array to an array of shape ``(m, len(t))`` (or
    ``(len(t),)``); the ``m`` integrals are returned together with an error
    estimate and the number of function evaluations. A panel is accepted when
    halving changes each of its integrals by at most its share (by length) of
    ``max(atol, rtol * |I|)``.
    """
    edges = np.asarray(edges, dtype=float)
    a, b = edges[:-1], edges[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    if a.size == 0:
        m = np.atleast_2d(func(np.zeros(1))).shape[0]
        return np.zeros(m), np.zeros(m), 0
    length = b[-1] - a[0] if a.size else 0.0
    coarse = _gl(func, a, b)
    evals = a.size * GL_ORDER
    total = np.zeros(coarse.shape[0])
    err = np.zeros(coarse.shape[0])
    scale = np.abs(coarse.sum(axis=1))
    for _ in range(max_rounds):
        mid = 0.5 * (a + b)
        left = _gl(func, a, mid)
        right = _gl(func, mid, b)
        evals += 2 * a.size * GL_ORDER
        fine = left + right
        diff = np.abs(fine - coarse)
        scale = np.maximum(scale, np.abs(total + fine.sum(axis=1)))
        tol = np.maximum(atol, rtol * scale)[:, None] * ((b - a) / length)[None, :]
        ok = np.all(diff <= tol, axis=0)
        total += fine[:, ok].sum(axis=1)
        err += diff[:, ok].sum(axis=1)
        if ok.all():
            return total, err, evals
        bad = ~ok
        a, mid, b = a[bad], mid[bad], b[bad]
        coarse = np.concatenate([left[:, bad], right[:, bad]], axis=1)
        a, b = np.concatenate([a, mid]), np.concatenate([mid, b])
        order = np.argsort(a)
        a, b, coarse = a[order], b[order], coarse[:, order]
    raise QuadratureError(f"adaptive quadrature did not converge ({a.size} panels left)")


def kink_times(traj: dfl.DflTrajectory, dist: SmoothDistance) -> np.ndarray:
    """Segment boundaries plus all times a coordinate crosses a kink of ``f``."""
    cuts = list(traj.breakpoints)
    for seg in traj.segments:
        dur = seg.t_end - seg.t_start
        if dur <= 0.0:
            continue
        for w1, w2 in ((1.0, 0.0), (0.0, 1.0)):
            for lev in dist.kinks:
                cuts.extend(seg.t_start + r for r in
                            dfl.crossing_times(seg.piece, *seg.y_start, w1, w2, lev, dur))
    return np.unique(np.asarray(cuts, dtype=float))


# ---------------------------------------------------------------------------
# base trajectory and variational path


def _as_xy(x):
    if isinstance(x, ScaledState):
        return x.x1, x.x2
    return float(x[0]), float(x[1])


def base_trajectory(sys: ScaledSystem, dist: SmoothDistance, x,
                    alpha: float | None = None) -> dfl.DflTrajectory:
    """DFL from ``x`` stopped where ``g`` vanishes for good."""
    return dfl.integrate(sys, _as_xy(x), stop=dfl.STOP_SUPPORT, C=dist.C, alpha=alpha)


@dataclass(frozen=True)
class VariationalPath:
    """Solution of ``dxi/dt = u^m xi`` along the segments of ``base``, ``xi(0) = z``."""

    base: dfl.DflTrajectory
    z: tuple
    starts: tuple
    sup_norm: float
    degenerate: bool

    def state(self, t):
        base = self.base
        if np.ndim(t) == 0:
            k = int(base.segment_index(float(t)))
            seg = base.segments[k]
            return seg.piece.flow(float(t) - seg.t_start, *self.starts[k], homogeneous=True)
        t = np.asarray(t, dtype=float)
        out1 = np.empty_like(t)
        out2 = np.empty_like(t)
        idx = base.segment_index(t)
        for k in np.unique(idx):
            sel = idx == k
            seg = base.segments[k]
            a, b = seg.piece.flow(t[sel] - seg.t_start, *self.starts[k], homogeneous=True)
            out1[sel] = a
            out2[sel] = b
        return out1, out2

    def to_dict(self) -> dict:
        return {"z": list(self.z), "starts": [list(s) for s in self.starts],
                "sup_norm": self.sup_norm, "degenerate": self.degenerate}


def variational_path(traj: dfl.DflTrajectory, z) -> VariationalPath:
    z1, z2 = float(z[0]), float(z[1])
    starts = []
    q1, q2 = z1, z2
    sup = abs(z1) + abs(z2)
    for seg in traj.segments:
        starts.append((q1, q2))
        dur = seg.t_end - seg.t_start
        sup = max(sup, dfl._segment_sup_l1(seg.piece, q1, q2, dur, homogeneous=True))
        q1, q2 = seg.piece.flow(dur, q1, q2, homogeneous=True)
    degenerate = any(sp.grazing for sp in traj.switching)
    return VariationalPath(traj, (z1, z2), tuple(starts), sup, degenerate)


def xi(sys: ScaledSystem, x, z, alpha: float | None = None,
       horizon: float | None = None) -> VariationalPath:
    """Variational path of the DFL from ``x`` in direction ``z``.

    The base trajectory is stopped at the alpha-ball, or at ``horizon`` if one
    is given. The equation is linear, so ``z`` is used as given.
    """
    if horizon is None:
        traj = dfl.integrate(sys, _as_xy(x), stop=dfl.STOP_ALPHA, alpha=alpha)
    else:
        traj = dfl.integrate(sys, _as_xy(x), stop=dfl.STOP_HORIZON, horizon=horizon, alpha=alpha)
    return variational_path(traj, z)


# ---------------------------------------------------------------------------
# G and its derivatives


@dataclass(frozen=True)
class GValue:
    G: float
    G1: float
    G2: float
    diagnostics: dict = field(default_factory=dict, compare=False)


def _g_from_traj(traj, dist, atol, rtol):
    edges = kink_times(traj, dist)

    def integrand(t):
        y1, y2 = traj.state(t)
        return np.vstack([dist.f(y1), dist.f(y2)])

    (G1, G2), err, evals = integrate_panels(integrand, edges, atol, rtol)
    G1, G2 = max(G1, 0.0), max(G2, 0.0)
    diag = {"t_stop": traj.t_end, "tau_alpha": traj.tau_alpha, "error_bound": float(err.sum()),
            "panels": int(edges.size - 1), "evaluations": int(evals),
            "switching_points": len(traj.switching)}
    return GValue(float(G1 + G2), float(G1), float(G2), diag)


def G_value(sys: ScaledSystem, dist: SmoothDistance, x, atol: float = 1e-10,
            rtol: float = 1e-13, alpha: float | None = None) -> GValue:
    """``G(x) = int_0^inf g(y(t; x)) dt`` split into its two coordinates."""
    return _g_from_traj(base_trajectory(sys, dist, x, alpha), dist, atol, rtol)


def _grad_from_traj(traj, dist, zs, atol, rtol):
    paths = [variational_path(traj, z) for z in zs]
    edges = kink_times(traj, dist)

    def integrand(t):
        y1, y2 = traj.state(t)
        d1, d2 = dist.fp(y1), dist.fp(y2)
        rows = []
        for p in paths:
            q1, q2 = p.state(t)
            rows.append(d1 * q1 + d2 * q2)
        return np.vstack(rows)

    vals, err, _ = integrate_panels(integrand, edges, atol, rtol)
    return vals, err, paths


def grad_G(sys: ScaledSystem, dist: SmoothDistance, x, z, atol: float = 1e-10,
           rtol: float = 1e-13, alpha: float | None = None):
    """Directional derivative ``sum_i int f'(y_i) xi_i dt``.

    ``z`` is a single direction (returns a float) or an ``(m, 2)`` array of
    directions (returns an array).
    """
    zs = np.asarray(z, dtype=float)
    single = zs.ndim == 1
    zs = np.atleast_2d(zs)
    vals, _, _ = _grad_from_traj(base_trajectory(sys, dist, x, alpha), dist, zs, atol, rtol)
    return float(vals[0]) if single else vals


def gradient_report(sys: ScaledSystem, dist: SmoothDistance, x, z, atol: float = 1e-10,
                    rtol: float = 1e-13, alpha: float | None = None) -> dict:
    """``grad_G`` with the variational sup-norm and the one-sided/degenerate flag."""
    traj = base_trajectory(sys, dist, x, alpha)
    vals, err, paths = _grad_from_traj(traj, dist, np.atleast_2d(z), atol, rtol)
    return {"grad": float(vals[0]), "error_bound": float(err[0]),
            "xi_sup": paths[0].sup_norm, "one_sided": paths[0].degenerate}


@dataclass(frozen=True)
class SecondDifference:
    D: float
    key1: float
    key2: float
    grad_base: float
    grad_shifted: float
    delta: float


def second_difference(sys: ScaledSystem, dist: SmoothDistance, x, z, zstar,
                      delta: float = 1e-4, atol: float = 1e-10, rtol: float = 1e-13,
                      alpha: float | None = None) -> SecondDifference:
    """``D = [grad_z G(x + delta z*) - grad_z G(x)] / delta`` and its split.

    ``key1`` collects the change of ``f'(y)`` against the unperturbed
    ``xi``; ``key2`` the change of ``xi`` weighted by the perturbed ``f'(y)``.
    """
    x1, x2 = _as_xy(x)
    zs1, zs2 = float(zstar[0]), float(zstar[1])
    t0 = base_trajectory(sys, dist, (x1, x2), alpha)
    t1 = base_trajectory(sys, dist, (x1 + delta * zs1, x2 + delta * zs2), alpha)
    p0 = variational_path(t0, z)
    p1 = variational_path(t1, z)
    edges = np.union1d(kink_times(t0, dist), kink_times(t1, dist))
    inv = 1.0 / delta

    def integrand(t):
        a1, a2 = t0.state(t)
        b1, b2 = t1.state(t)
        fa1, fa2 = dist.fp(a1), dist.fp(a2)
        fb1, fb2 = dist.fp(b1), dist.fp(b2)
        q1, q2 = p0.state(t)
        r1, r2 = p1.state(t)
        k1 = ((fb1 - fa1) * q1 + (fb2 - fa2) * q2) * inv
        k2 = (fb1 * (r1 - q1) + fb2 * (r2 - q2)) * inv
        return np.vstack([k1, k2, fa1 * q1 + fa2 * q2, fb1 * r1 + fb2 * r2])

    (k1, k2, g0, g1), _, _ = integrate_panels(integrand, edges, atol, rtol)
    return SecondDifference(float(k1 + k2), float(k1), float(k2), float(g0), float(g1), delta)


def generator_drift(sys: ScaledSystem, dist: SmoothDistance, s, atol: float = 1e-10,
                    rtol: float = 1e-13, alpha: float | None = None) -> dict:
    """Exact generator action ``AG(x) = sum_x' [G(x') - G(x)] nu(x, x')`` at a lattice state."""
    x = scaled_of_unscaled(sys, s)
    G0 = G_value(sys, dist, x, atol, rtol, alpha).G
    AG = 0.0
    for nb, rate in transition_rates(sys, s):
        Gn = G_value(sys, dist, scaled_of_unscaled(sys, nb), atol, rtol, alpha).G
        AG += (Gn - G0) * rate
    return {"x": [x.x1, x.x2], "g": float(dist.g(x.x1, x.x2)), "G": G0, "AG": AG}


def fit_drift_inequality(g, AG) -> tuple[float, float]:
    """Fit ``AG <= -eps g + kappa`` on all points.

    Among all valid lines the one with the smallest value at the mean of ``g``
    is taken (the tightest supporting line of the point cloud there).
    """
    g = np.asarray(g, dtype=float)
    AG = np.asarray(AG, dtype=float)
    if g.size == 0:
        raise ValueError("no points to fit")
    if np.ptp(g) == 0.0:
        return 0.0, float(AG.max())
    # variables (eps, kappa); constraint g eps - kappa <= -AG
    res = linprog(c=[-g.mean(), 1.0], A_ub=np.column_stack([g, -np.ones_like(g)]), b_ub=-AG,
                  bounds=[(None, None), (None, None)], method="highs")
    if res.status != 0:
        raise RuntimeError(f"drift-inequality fit failed: {res.message}")
    eps, kappa = res.x
    kappa = max(kappa, float(np.max(AG + eps * g)))
    return float(eps), float(kappa)


def drift_identity_residual(sys: ScaledSystem, dist: SmoothDistance, x, atol: float = 1e-10,
                            rtol: float = 1e-13, alpha: float | None = None) -> dict:
    """``grad_{v(x)} G(x) + g(x)``, which vanishes identically."""
    x1, x2 = _as_xy(x)
    v = drift_scaled(sys, (x1, x2))
    gx = float(dist.g(x1, x2))
    val = grad_G(sys, dist, (x1, x2), v, atol, rtol, alpha)
    return {"grad_v": val, "g": gx, "residual": val + gx}


# ---------------------------------------------------------------------------
# sweeps

UNIT_DIRECTIONS = ((1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0))


def sweep_record(sys: ScaledSystem, dist: SmoothDistance, x, delta: float = 1e-4,
                 directions=UNIT_DIRECTIONS, atol: float = 1e-10, rtol: float = 1e-13,
                 alpha: float | None = None, with_drift: bool = True) -> dict:
    """One JSON-lines record: g, G, directional derivatives and second differences.

    Uses linearity in ``z``: only the gradients along ``e1, e2`` are integrated
    and the others follow by sign.
    """
    x1, x2 = _as_xy(x)
    dirs = np.asarray(directions, dtype=float)
    traj = base_trajectory(sys, dist, (x1, x2), alpha)
    gv = _g_from_traj(traj, dist, atol, rtol)
    basis = np.eye(2)
    grad_e, _, paths = _grad_from_traj(traj, dist, basis, atol, rtol)
    grad = {_dir_key(z): float(z @ grad_e) for z in dirs}
    D = {}
    Dmax = 0.0
    shifted = {}
    skipped = []
    for zs in dirs:
        key = _dir_key(zs)
        xs = (x1 + delta * zs[0], x2 + delta * zs[1])
        if not sys.in_state_space(*xs, tol=0.0):
            skipped.append(key)  # shift would leave the state space
            continue
        tS = base_trajectory(sys, dist, xs, alpha)
        gS, _, _ = _grad_from_traj(tS, dist, basis, atol, rtol)
        shifted[key] = gS
        for z in dirs:
            d = float(z @ (gS - grad_e)) / delta
            D[f"{_dir_key(z)}|{key}"] = d
            Dmax = max(Dmax, abs(d))
    rec = {
        "n": sys.n, "x": [x1, x2], "g": float(dist.g(x1, x2)), "G": gv.G, "G1": gv.G1, "G2": gv.G2,
        "gradG": grad, "D": D, "D_absmax": Dmax, "D_skipped": skipped,
        "diagnostics": {**gv.diagnostics, "xi_sup": max(p.sup_norm for p in paths),
                        "one_sided": any(p.degenerate for p in paths)},
    }
    if with_drift:
        v = drift_scaled(sys, (x1, x2))
        rec["grad_v"] = float(v @ grad_e)
        rec["drift_residual"] = rec["grad_v"] + rec["g"]
    return rec


def _dir_key(z) -> str:
    names = {(1.0, 0.0): "+e1", (-1.0, 0.0): "-e1", (0.0, 1.0): "+e2", (0.0, -1.0): "-e2"}
    t = (float(z[0]) + 0.0, float(z[1]) + 0.0)
    return names.get(t, f"({t[0]:g},{t[1]:g})")


def sweep_jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
