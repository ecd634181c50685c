"""Drift-based fluid limits (DFLs) of the scaled N-system.

Inside a domain the DFL solves a 2x2 triangular affine ODE, so each segment is
evaluated in closed form. Exits from a domain are located on the closed-form
boundary functions: each such function has at most one critical point on a
segment (see :meth:`AffinePiece.critical_time`), which splits the segment into
monotone pieces that are bracketed and solved with Brent's method.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .model import (
    BOUNDARIES,
    BOUNDARY_SUM,
    BOUNDARY_X1,
    BOUNDARY_X2,
    DOMAIN_CONSTRAINTS,
    AffinePiece,
    Domain,
    ScaledState,
    ScaledSystem,
    StateDomainError,
    boundary_tolerance,
    classify_domain,
)

ROOT_XTOL = 1e-13
ROOT_RTOL = 4 * np.finfo(float).eps

# boundary function h = w . y - c, keyed by boundary id
def _boundary_form(sys: ScaledSystem, key: str):
    if key == BOUNDARY_X1:
        return 1.0, 0.0, -sys.p
    if key == BOUNDARY_X2:
        return 0.0, 1.0, sys.p + sys.bn
    return 1.0, 1.0, sys.bn


class CapExceededError(RuntimeError):
    """The stopping rule was not reached before the safety cap time."""


class AlphaRegionError(ValueError):
    """The alpha-ball is not contained in domain X0 for this n."""


@dataclass(frozen=True)
class AlphaRegion:
    """The l1 ball of radius ``alpha`` around the origin, inside X0."""

    alpha: float

    @staticmethod
    def for_system(sys: ScaledSystem, alpha: float | None = None) -> "AlphaRegion":
        if alpha is None:
            alpha = sys.params.b / 2.0
        if not (alpha < sys.bn and alpha < sys.p):
            need = (sys.params.b / (2 * sys.params.psi12)) ** 2
            raise AlphaRegionError(
                f"alpha={alpha} ball not inside X0 for n={sys.n} (bn={sys.bn:.4g}, p={sys.p:.4g}); "
                f"need roughly n >= {need:.4g}")
        return AlphaRegion(alpha)

    def contains(self, x1: float, x2: float) -> bool:
        return abs(x1) + abs(x2) <= self.alpha


def default_time_constant(sys: ScaledSystem) -> float:
    """Crude a-priori time-per-unit-norm constant used only for the safety cap."""
    P = sys.params
    mu_min = min(P.mu11, P.mu12, P.mu22)
    return 2.0 * (1.0 + 1.0 / min(sys.bn, 1.0)) / mu_min


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    domain: Domain
    piece: AffinePiece
    y_start: tuple

    def state(self, t):
        return self.piece.flow(np.asarray(t) - self.t_start if np.ndim(t) else t - self.t_start, *self.y_start)

    @property
    def y_end(self):
        return self.piece.flow(self.t_end - self.t_start, *self.y_start)


@dataclass(frozen=True)
class SwitchingPoint:
    t: float
    boundaries: frozenset
    before: Domain | None
    after: Domain | None

    @property
    def grazing(self) -> bool:
        return self.before is not None and self.before == self.after


@dataclass(frozen=True)
class DflTrajectory:
    initial: ScaledState
    segments: tuple
    switching: tuple
    tau_alpha: float | None
    sup_norm: float
    stop: str
    alpha: float | None = None
    starts: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def switching_points(self) -> tuple:
        return tuple(sp.t for sp in self.switching)

    @property
    def t_end(self) -> float:
        return self.segments[-1].t_end

    @property
    def breakpoints(self) -> list:
        return [s.t_start for s in self.segments] + [self.t_end]

    def segment_index(self, t):
        idx = np.searchsorted(self.starts, t, side="right") - 1
        return np.clip(idx, 0, len(self.segments) - 1)

    def state(self, t):
        """Trajectory at time(s) ``t``; past ``t_end`` the last segment is extended."""
        if np.ndim(t) == 0:
            seg = self.segments[int(self.segment_index(float(t)))]
            return seg.state(float(t))
        t = np.asarray(t, dtype=float)
        y1 = np.empty_like(t)
        y2 = np.empty_like(t)
        idx = self.segment_index(t)
        for k in np.unique(idx):
            sel = idx == k
            a, b = self.segments[k].state(t[sel])
            y1[sel] = a
            y2[sel] = b
        return y1, y2

    def to_dict(self) -> dict:
        return {
            "initial": [self.initial.x1, self.initial.x2],
            "stop": self.stop,
            "tau_alpha": self.tau_alpha,
            "sup_norm": self.sup_norm,
            "segments": [
                {"t_start": s.t_start, "t_end": s.t_end, "domain": s.domain.name,
                 "y_start": list(s.y_start), "u": s.piece.u.tolist(), "a": s.piece.a.tolist()}
                for s in self.segments
            ],
            "switching_points": [
                {"t": sp.t, "boundaries": sorted(sp.boundaries),
                 "before": sp.before.name if sp.before is not None else None,
                 "after": sp.after.name if sp.after is not None else None}
                for sp in self.switching
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def samples_csv(self, times) -> str:
        times = np.asarray(times, dtype=float)
        y1, y2 = self.state(times)
        lines = ["t,y1,y2"]
        lines += [f"{t!r},{a!r},{b!r}" for t, a, b in zip(times, y1, y2)]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# root finding on a closed-form segment


def first_exit(piece: AffinePiece, y1: float, y2: float, w1: float, w2: float, c: float,
               sign: int, horizon: float, tol: float, homogeneous: bool = False):
    """First time in (0, horizon] at which ``sign * (w . y(t) - c)`` drops below 0.

    Returns ``(t, grazing)`` or ``(None, False)``. A touching contact (a local
    minimum within ``tol`` of zero) is reported with ``grazing=True``.
    """
    def g(t):
        q1, q2 = piece.flow(t, y1, y2, homogeneous)
        return sign * (w1 * q1 + w2 * q2 - c)

    tc = piece.critical_time(w1, w2, y1, y2, homogeneous)
    if tc is not None and tc >= horizon:
        tc = None
    A, B = piece.rate_coefficients(w1, w2, y1, y2, homogeneous)
    slope0 = sign * (A + B) if piece.alpha != piece.gamma else sign * A
    if abs(slope0) <= 1e-14 * (abs(A) + abs(B) + 1.0):
        # tangent start: the sign just after 0 decides
        slope0 = sign * piece.rate(1e-6, w1, w2, y1, y2, homogeneous)
    g0 = g(0.0)

    def root(lo, hi):
        glo, ghi = g(lo), g(hi)
        if ghi >= 0.0:
            return None
        if glo <= 0.0:
            return lo
        return brentq(g, lo, hi, xtol=ROOT_XTOL, rtol=ROOT_RTOL)

    if tc is None:
        if slope0 >= 0.0:
            return None, False
        if g0 <= 0.0:
            return 0.0, False
        return root(0.0, horizon), False
    gc = g(tc)
    if slope0 < 0.0:
        # decreasing, then increasing: minimum at tc
        if g0 <= 0.0 and g0 < -tol:
            return 0.0, False
        if gc < -tol:
            return root(0.0, tc) if g0 > 0.0 else 0.0, False
        if gc <= tol:
            return tc, True
        return None, False
    # increasing, then decreasing: maximum at tc
    return root(tc, horizon), False


def crossing_times(piece: AffinePiece, y1: float, y2: float, w1: float, w2: float,
                   c: float, duration: float, homogeneous: bool = False) -> list:
    """All times in (0, duration) where ``w . q(t) = c`` (at most two)."""
    def g(t):
        q1, q2 = piece.flow(t, y1, y2, homogeneous)
        return w1 * q1 + w2 * q2 - c

    tc = piece.critical_time(w1, w2, y1, y2, homogeneous)
    knots = [0.0] + ([tc] if tc is not None and tc < duration else []) + [duration]
    out = []
    for a, b in zip(knots[:-1], knots[1:]):
        ga, gb = g(a), g(b)
        if ga == 0.0:
            if a > 0.0:
                out.append(a)
        elif ga * gb < 0.0:
            out.append(brentq(g, a, b, xtol=ROOT_XTOL, rtol=ROOT_RTOL))
    return out


def _taylor_inward(piece: AffinePiece, y1, y2, w1, w2, sign, scale) -> bool:
    """Does the flow of ``piece`` move into ``sign * (w.y - c) >= 0`` from the boundary?"""
    v1, v2 = piece.drift(y1, y2)
    for _ in range(3):
        d = sign * (w1 * v1 + w2 * v2)
        if abs(d) > 1e-10 * scale:
            return d > 0
        v1, v2 = piece.alpha * v1 + piece.beta * v2, piece.gamma * v2
    return True


def select_domain(sys: ScaledSystem, y1: float, y2: float, on: frozenset = frozenset(),
                  prefer: Domain | None = None) -> tuple[Domain, frozenset]:
    """Domain the DFL enters from ``y``; ``on`` forces boundaries to count as active."""
    cls = classify_domain(sys, (y1, y2))
    active = cls.boundaries | on
    if cls.label is not None and not on:
        return cls.label, active
    if on - cls.boundaries:
        cls = _classify_with(sys, y1, y2, active)
    candidates = sorted(cls.adjacent)
    scale = 1.0 + abs(y1) + abs(y2) + sys.p
    valid = []
    for m in candidates:
        piece = sys.pieces[m]
        ok = True
        for key, sgn in DOMAIN_CONSTRAINTS[m]:
            if key not in active:
                continue
            w1, w2, _ = _boundary_form(sys, key)
            if not _taylor_inward(piece, y1, y2, w1, w2, sgn, scale):
                ok = False
                break
        if ok:
            valid.append(m)
    if not valid:
        valid = candidates
    if prefer is not None and prefer in valid:
        return prefer, active
    return valid[0], active


def _classify_with(sys, y1, y2, active):
    from .model import DomainId, _domain_of_signs
    h = sys.boundary_values(y1, y2)
    choices = [(-1, 1) if k in active else (1 if h[k] > 0 else -1,) for k in BOUNDARIES]
    doms = set()
    for s1 in choices[0]:
        for s2 in choices[1]:
            for s3 in choices[2]:
                d = _domain_of_signs(s1, s2, s3)
                if d is not None:
                    doms.add(d)
    return DomainId(label=None, adjacent=frozenset(doms), boundaries=frozenset(active))


def _segment_sup_l1(piece: AffinePiece, y1, y2, duration, homogeneous=False) -> float:
    """Exact max of |q1| + |q2| over a segment of the closed-form flow."""
    best = abs(y1) + abs(y2)
    e1, e2 = piece.flow(duration, y1, y2, homogeneous)
    best = max(best, abs(e1) + abs(e2))
    for w1 in (1.0, -1.0):
        for w2 in (1.0, -1.0):
            tc = piece.critical_time(w1, w2, y1, y2, homogeneous)
            if tc is not None and tc < duration:
                q1, q2 = piece.flow(tc, y1, y2, homogeneous)
                best = max(best, abs(q1) + abs(q2))
    return best


def _alpha_hit(piece, y1, y2, alpha, horizon):
    """First time |y1| + |y2| <= alpha on an X0 segment (monotone decay there)."""
    def g(t):
        q1, q2 = piece.flow(t, y1, y2)
        return abs(q1) + abs(q2) - alpha
    if g(0.0) <= 0.0:
        return 0.0
    if g(horizon) > 0.0:
        return None
    return brentq(g, 0.0, horizon, xtol=ROOT_XTOL, rtol=ROOT_RTOL)


def support_exit_time(sys: ScaledSystem, y1: float, y2: float, C: float) -> float:
    """Extra time after entering the alpha-ball until max_i |y_i| <= C (X0 decay)."""
    P = sys.params
    t = 0.0
    for y, mu in ((y1, P.mu12), (y2, P.mu22)):
        if abs(y) > C:
            t = max(t, math.log(abs(y) / C) / mu)
    return t


STOP_ALPHA = "alpha"
STOP_HORIZON = "horizon"
STOP_SUPPORT = "support"


def integrate(sys: ScaledSystem, x, stop: str = STOP_ALPHA, horizon: float | None = None,
              C: float | None = None, alpha: float | None = None,
              cap: float | None = None) -> DflTrajectory:
    """Integrate the DFL from ``x`` until the stopping rule holds.

    ``stop`` is ``"alpha"`` (first entry into the alpha-ball), ``"horizon"``
    (fixed time ``horizon``) or ``"support"`` (alpha-ball reached and
    ``max_i |y_i| <= C``; the smoothed distance vanishes from then on).
    """
    x1, x2 = (x.x1, x.x2) if isinstance(x, ScaledState) else (float(x[0]), float(x[1]))
    if not sys.in_state_space(x1, x2):
        raise StateDomainError(f"({x1}, {x2}) is outside the scaled state space")
    x1 = max(x1, sys.x1_min)
    x2 = max(x2, sys.x2_min)
    region = None
    if stop in (STOP_ALPHA, STOP_SUPPORT):
        region = AlphaRegion.for_system(sys, alpha)
    elif stop == STOP_HORIZON:
        if horizon is None or horizon < 0:
            raise ValueError("stop='horizon' needs a non-negative horizon")
        try:
            region = AlphaRegion.for_system(sys, alpha)
        except AlphaRegionError:
            region = None
    else:
        raise ValueError(f"unknown stopping rule {stop!r}")
    if stop == STOP_SUPPORT and (C is None or C <= 0):
        raise ValueError("stop='support' needs the flat-zone half-width C > 0")
    if cap is None:
        cap = 10.0 * default_time_constant(sys) * (1.0 + abs(x1) + abs(x2))
        if stop == STOP_HORIZON:
            cap = max(cap, horizon)

    segments = []
    switching = []
    tau = None
    t = 0.0
    y1, y2 = x1, x2
    sup = abs(x1) + abs(x2)
    dom, active = select_domain(sys, y1, y2)
    if len(classify_domain(sys, (y1, y2)).adjacent) > 1:
        switching.append(SwitchingPoint(0.0, active, None, dom))
    stop_time = horizon if stop == STOP_HORIZON else None

    while True:
        piece = sys.pieces[dom]
        limit = max((stop_time if stop_time is not None else cap) - t, 0.0)
        t_exit, exit_keys, grazing = math.inf, frozenset(), False
        tol = boundary_tolerance(y1, y2)
        for key, sgn in DOMAIN_CONSTRAINTS[dom]:
            w1, w2, c = _boundary_form(sys, key)
            te, gz = first_exit(piece, y1, y2, w1, w2, c, sgn, limit, tol)
            if te is None:
                continue
            if te < t_exit - 10 * ROOT_XTOL:
                t_exit, exit_keys, grazing = te, frozenset([key]), gz
            elif abs(te - t_exit) <= 10 * ROOT_XTOL:
                exit_keys = exit_keys | {key}
                grazing = grazing and gz
        if region is not None and tau is None and dom == Domain.X0:
            th = _alpha_hit(piece, y1, y2, region.alpha, min(limit, t_exit))
            if th is not None:
                tau = t + th
                if stop == STOP_ALPHA:
                    stop_time = tau
                elif stop == STOP_SUPPORT:
                    h1, h2 = piece.flow(th, y1, y2)
                    stop_time = tau + support_exit_time(sys, h1, h2, C)
        if stop_time is not None and t + t_exit >= stop_time:
            dur = stop_time - t
            segments.append(Segment(t, stop_time, dom, piece, (y1, y2)))
            sup = max(sup, _segment_sup_l1(piece, y1, y2, dur))
            break
        if not math.isfinite(t_exit):
            raise CapExceededError(
                f"DFL from ({x1}, {x2}) did not meet stop rule {stop!r} before cap time {cap:.4g}")
        segments.append(Segment(t, t + t_exit, dom, piece, (y1, y2)))
        sup = max(sup, _segment_sup_l1(piece, y1, y2, t_exit))
        y1, y2 = piece.flow(t_exit, y1, y2)
        t = t + t_exit
        new_dom, active = select_domain(sys, y1, y2, on=exit_keys, prefer=dom if grazing else None)
        switching.append(SwitchingPoint(t, active, dom, new_dom))
        dom = new_dom
        if len(switching) > 16:
            raise RuntimeError(f"runaway switching from ({x1}, {x2}); got {len(switching)} points")

    starts = np.array([s.t_start for s in segments])
    return DflTrajectory(
        initial=ScaledState(x1, x2),
        segments=tuple(segments),
        switching=tuple(switching),
        tau_alpha=tau,
        sup_norm=sup,
        stop=stop,
        alpha=None if region is None else region.alpha,
        starts=starts,
    )


def hitting_time_alpha(sys: ScaledSystem, x, alpha: float | None = None) -> float:
    """First time the DFL from ``x`` enters the alpha-ball."""
    return integrate(sys, x, stop=STOP_ALPHA, alpha=alpha).tau_alpha


def switching_points(sys: ScaledSystem, x, alpha: float | None = None) -> list:
    """Ordered (time, boundary labels) of the switching points of the DFL from ``x``."""
    traj = integrate(sys, x, stop=STOP_ALPHA, alpha=alpha)
    return [(sp.t, sp.boundaries) for sp in traj.switching]


def band_occupation(sys: ScaledSystem, x, C3: float, C4: float,
                    alpha: float | None = None) -> float:
    """Total time with ``y_i(t)`` in ``[C3, C4]`` for at least one ``i``."""
    if not C3 < C4:
        raise ValueError("need C3 < C4")
    if C3 <= 0.0 <= C4:
        raise ValueError("band must not contain 0")
    region = AlphaRegion.for_system(sys, alpha)
    below = 0.999999 * min(abs(C3), abs(C4), region.alpha)
    # past the support stop both |y_i| stay below the band
    traj = integrate(sys, x, stop=STOP_SUPPORT, C=below, alpha=alpha)
    cuts = set(traj.breakpoints)
    for seg in traj.segments:
        dur = seg.t_end - seg.t_start
        for w1, w2 in ((1.0, 0.0), (0.0, 1.0)):
            for lev in (C3, C4):
                cuts.update(seg.t_start + r for r in crossing_times(seg.piece, *seg.y_start, w1, w2, lev, dur))
    cuts = np.array(sorted(cuts))
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    y1, y2 = traj.state(mids)
    inside = ((y1 >= C3) & (y1 <= C4)) | ((y2 >= C3) & (y2 <= C4))
    return float(np.sum(np.diff(cuts)[inside]))
