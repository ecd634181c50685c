"""N-system parameterization, Halfin-Whitt scaling, state spaces and drift fields.

Two customer types, two pools. Pool 1 serves type 1 only; pool 2 serves both,
with preemptive priority for type 2. System ``n`` has ``Lambda_i = lambda_i n``,
``B1 = floor(psi11 n)`` and ``B2 = floor(psi12 n + psi22 n + b sqrt(n))``.
The per-``n`` coefficients ``psi11n, psi12n, psi22n, bn`` are chosen so that the
pool sizes are reproduced exactly and the load identities keep holding, which
makes the lattice drift identity exact.

Scaled coordinates center at the equilibrium point and divide by sqrt(n)::

    x1 = (X1 - psi11n n - psi12n n) / sqrt(n),   x2 = (X2 - psi22n n) / sqrt(n)

In scaled coordinates the three domain boundaries are ``x1 = -p``,
``x2 = p + bn`` and ``x1 + x2 = bn`` with ``p = psi12n sqrt(n)``.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np


class ParameterError(ValueError):
    """A model parameter or scale is outside its admissible domain."""


class StateDomainError(ValueError):
    """A state lies outside the (scaled) state space."""


_PARAM_FIELDS = ("mu11", "mu12", "mu22", "psi11", "psi12", "psi22", "b")


@dataclass(frozen=True)
class SystemParams:
    mu11: float
    mu12: float
    mu22: float
    psi11: float
    psi12: float
    psi22: float
    b: float
    lambda1: float = field(init=False)
    lambda2: float = field(init=False)

    def __post_init__(self):
        for name in _PARAM_FIELDS:
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value) or value <= 0:
                raise ParameterError(f"{name} must be a finite positive number, got {value!r}")
            object.__setattr__(self, name, float(value))
        object.__setattr__(self, "lambda1", self.psi11 * self.mu11 + self.psi12 * self.mu12)
        object.__setattr__(self, "lambda2", self.psi22 * self.mu22)

    def to_dict(self) -> dict:
        d = {name: getattr(self, name) for name in _PARAM_FIELDS}
        d["lambda1"] = self.lambda1
        d["lambda2"] = self.lambda2
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemParams":
        missing = [k for k in _PARAM_FIELDS if k not in d]
        if missing:
            raise ParameterError(f"missing parameter(s): {', '.join(missing)}")
        params = cls(**{k: d[k] for k in _PARAM_FIELDS})
        # arrival rates are derived; a document may carry them but they must agree
        for key in ("lambda1", "lambda2"):
            if key in d and not math.isclose(d[key], getattr(params, key), rel_tol=1e-12, abs_tol=1e-15):
                raise ParameterError(f"{key}={d[key]} inconsistent with derived value {getattr(params, key)}")
        return params

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SystemParams":
        return cls.from_dict(json.loads(text))


def make_params(mu11, mu12, mu22, psi11, psi12, psi22, b) -> SystemParams:
    """Build an immutable parameter set; the arrival rates are derived."""
    return SystemParams(mu11, mu12, mu22, psi11, psi12, psi22, b)


class Domain(enum.IntEnum):
    """Affine drift domains in scaled coordinates.

    X0: no queues, pool 1 full.  X1: pools full, type-1 queue.
    X2: type-2 queue (pool 2 all type 2), pool 1 full.
    X3: pool 1 not full, pool 2 not full of type 2.
    X4: pool 1 not full, type-2 queue.
    """

    X0 = 0
    X1 = 1
    X2 = 2
    X3 = 3
    X4 = 4


# Boundary identifiers: which unscaled equality holds.
BOUNDARY_X1 = "X1=B1"      # x1 = -p
BOUNDARY_X2 = "X2=B2"      # x2 = p + b
BOUNDARY_SUM = "X1+X2=B1+B2"  # x1 + x2 = b
BOUNDARIES = (BOUNDARY_X1, BOUNDARY_X2, BOUNDARY_SUM)

# Closure of each domain as sign constraints on the boundary functions
#   h[X1=B1] = x1 + p,  h[X2=B2] = x2 - (p + b),  h[sum] = x1 + x2 - b.
# Redundant constraints are dropped.
DOMAIN_CONSTRAINTS = {
    Domain.X0: ((BOUNDARY_X1, +1), (BOUNDARY_SUM, -1)),
    Domain.X1: ((BOUNDARY_X1, +1), (BOUNDARY_X2, -1), (BOUNDARY_SUM, +1)),
    Domain.X2: ((BOUNDARY_X1, +1), (BOUNDARY_X2, +1)),
    Domain.X3: ((BOUNDARY_X1, -1), (BOUNDARY_X2, -1)),
    Domain.X4: ((BOUNDARY_X1, -1), (BOUNDARY_X2, +1)),
}


def _domain_of_signs(s1: int, s2: int, s3: int) -> Domain | None:
    """Domain of a strict sign pattern; None for the two empty patterns."""
    if s1 > 0:
        if s2 > 0:
            return Domain.X2 if s3 > 0 else None
        return Domain.X1 if s3 > 0 else Domain.X0
    if s2 > 0:
        return Domain.X4
    return None if s3 > 0 else Domain.X3


@dataclass(frozen=True)
class UnscaledState:
    X1: int
    X2: int

    def __post_init__(self):
        for name in ("X1", "X2"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise StateDomainError(f"{name} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, name, int(v))


@dataclass(frozen=True)
class ScaledState:
    x1: float
    x2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2])


@dataclass(frozen=True)
class DomainId:
    """Classification of a point: ``label`` is set only for interior points."""

    label: Domain | None
    adjacent: frozenset
    boundaries: frozenset = frozenset()

    @property
    def on_boundary(self) -> bool:
        return self.label is None


class AffinePiece:
    """Drift ``u y + a`` with ``u`` upper triangular (2x2).

    The flow of ``dy/dt = u y + a`` is evaluated in closed form. Every
    directional functional ``w . dy/dt`` along the flow has the form
    ``A e^{alpha t} + B e^{gamma t}`` (or ``(A + B t) e^{alpha t}``), so it
    changes sign at most once; :meth:`critical_time` returns that time.
    """

    __slots__ = ("u", "a", "alpha", "beta", "gamma", "a1", "a2")

    def __init__(self, u, a):
        u = np.asarray(u, dtype=float)
        a = np.asarray(a, dtype=float)
        if u.shape != (2, 2) or a.shape != (2,) or u[1, 0] != 0.0:
            raise ValueError("expected an upper triangular 2x2 matrix and a 2-vector")
        u.setflags(write=False)
        a.setflags(write=False)
        self.u = u
        self.a = a
        self.alpha = float(u[0, 0])
        self.beta = float(u[0, 1])
        self.gamma = float(u[1, 1])
        self.a1 = float(a[0])
        self.a2 = float(a[1])

    def __repr__(self):
        return f"AffinePiece(u={self.u.tolist()}, a={self.a.tolist()})"

    def __eq__(self, other):
        return (isinstance(other, AffinePiece) and np.array_equal(self.u, other.u)
                and np.array_equal(self.a, other.a))

    def __hash__(self):
        return hash((tuple(self.u.ravel()), tuple(self.a)))

    def drift(self, y1, y2):
        return (self.alpha * y1 + self.beta * y2 + self.a1, self.gamma * y2 + self.a2)

    def linear(self) -> "AffinePiece":
        return AffinePiece(self.u, np.zeros(2))

    # closed-form flow -----------------------------------------------------
    def flow(self, t, y1, y2, homogeneous: bool = False):
        """State at time(s) ``t`` of the flow started from ``(y1, y2)``.

        Works for scalar or array ``t``; with ``homogeneous`` the affine term is
        dropped (variational equation).
        """
        al, be, ga = self.alpha, self.beta, self.gamma
        a1, a2 = (0.0, 0.0) if homogeneous else (self.a1, self.a2)
        if np.ndim(t) == 0:
            t = float(t)
            ea, eg = math.exp(al * t), math.exp(ga * t)
            p_a, p_g = _phi(al, t), _phi(ga, t)
            z2 = eg * y2 + a2 * p_g
            z1 = ea * y1 + a1 * p_a
            if be != 0.0:
                e12 = _divdiff_exp(al, ga, t)
                z1 += be * (e12 * y2 + a2 * _int_phi(al, ga, t))
            return z1, z2
        t = np.asarray(t, dtype=float)
        ea, eg = np.exp(al * t), np.exp(ga * t)
        p_a, p_g = _phi_v(al, t), _phi_v(ga, t)
        z2 = eg * y2 + a2 * p_g
        z1 = ea * y1 + a1 * p_a
        if be != 0.0:
            e12 = _divdiff_exp_v(al, ga, t)
            z1 = z1 + be * (e12 * y2 + a2 * _int_phi_v(al, ga, t))
        return z1, z2

    def rate_coefficients(self, w1, w2, y1, y2, homogeneous: bool = False):
        """Coefficients (A, B) of ``w . dq/dt`` along the flow from ``(y1, y2)``."""
        if homogeneous:
            v1, v2 = self.alpha * y1 + self.beta * y2, self.gamma * y2
        else:
            v1, v2 = self.drift(y1, y2)
        al, be, ga = self.alpha, self.beta, self.gamma
        if al != ga:
            k = be * v2 / (al - ga)
            return w1 * v1 + w1 * k, w2 * v2 - w1 * k
        return w1 * v1 + w2 * v2, w1 * be * v2

    def rate(self, t, w1, w2, y1, y2, homogeneous: bool = False):
        A, B = self.rate_coefficients(w1, w2, y1, y2, homogeneous)
        if self.alpha != self.gamma:
            return A * math.exp(self.alpha * t) + B * math.exp(self.gamma * t)
        return (A + B * t) * math.exp(self.alpha * t)

    def critical_time(self, w1, w2, y1, y2, homogeneous: bool = False) -> float | None:
        """Unique t > 0 where ``w . dq/dt`` changes sign, if any."""
        A, B = self.rate_coefficients(w1, w2, y1, y2, homogeneous)
        al, ga = self.alpha, self.gamma
        if al != ga:
            if A == 0.0 or B == 0.0 or (A > 0) == (B > 0):
                return None
            t = math.log(-B / A) / (al - ga)
        else:
            if B == 0.0:
                return None
            t = -A / B
        return t if t > 0.0 else None


def _phi(c: float, t: float) -> float:
    """(e^{ct} - 1)/c, = t at c = 0."""
    if c == 0.0:
        return t
    return math.expm1(c * t) / c


def _divdiff_exp(al: float, ga: float, t: float) -> float:
    """(e^{al t} - e^{ga t})/(al - ga), factored to avoid overflow."""
    if al >= ga:
        return math.exp(al * t) * _phi(ga - al, t)
    return math.exp(ga * t) * _phi(al - ga, t)


def _int_phi(al: float, ga: float, t: float) -> float:
    """int_0^t e^{al (t-s)} phi(ga, s) ds."""
    if ga != 0.0:
        return (_divdiff_exp(al, ga, t) - _phi(al, t)) / ga
    if al != 0.0:
        return (_phi(al, t) - t) / al
    return 0.5 * t * t


def _phi_v(c, t):
    if c == 0.0:
        return t.copy()
    return np.expm1(c * t) / c


def _divdiff_exp_v(al, ga, t):
    if al >= ga:
        return np.exp(al * t) * _phi_v(ga - al, t)
    return np.exp(ga * t) * _phi_v(al - ga, t)


def _int_phi_v(al, ga, t):
    if ga != 0.0:
        return (_divdiff_exp_v(al, ga, t) - _phi_v(al, t)) / ga
    if al != 0.0:
        return (_phi_v(al, t) - t) / al
    return 0.5 * t * t


@dataclass(frozen=True)
class ScaledSystem:
    """System ``n`` of the sequence, with per-``n`` adjusted coefficients."""

    params: SystemParams
    n: int
    B1: int
    B2: int
    Lambda1: float
    Lambda2: float
    psi11n: float
    psi12n: float
    psi22n: float
    bn: float
    kappa: float

    # derived quantities ---------------------------------------------------
    @cached_property
    def sqrt_n(self) -> float:
        return math.sqrt(self.n)

    @cached_property
    def p(self) -> float:
        """Scaled location of the boundary ``X1 = B1`` is ``x1 = -p``."""
        return self.psi12n * self.sqrt_n

    @cached_property
    def x1_min(self) -> float:
        return -(self.psi11n + self.psi12n) * self.sqrt_n

    @cached_property
    def x2_min(self) -> float:
        return -self.psi22n * self.sqrt_n

    @cached_property
    def center(self) -> tuple[float, float]:
        """Equilibrium point in unscaled coordinates (not necessarily integer)."""
        return ((self.psi11n + self.psi12n) * self.n, self.psi22n * self.n)

    @cached_property
    def pieces(self) -> dict:
        P = self.params
        p, b = self.p, self.bn
        m11, m12, m22 = P.mu11, P.mu12, P.mu22
        return {
            Domain.X0: AffinePiece([[-m12, 0.0], [0.0, -m22]], [0.0, 0.0]),
            Domain.X1: AffinePiece([[0.0, m12], [0.0, -m22]], [-m12 * b, 0.0]),
            Domain.X2: AffinePiece([[0.0, 0.0], [0.0, 0.0]], [m12 * p, -m22 * (p + b)]),
            Domain.X3: AffinePiece([[-m11, 0.0], [0.0, -m22]], [(m12 - m11) * p, 0.0]),
            Domain.X4: AffinePiece([[-m11, 0.0], [0.0, 0.0]], [(m12 - m11) * p, -m22 * (p + b)]),
        }

    @cached_property
    def rate_bound(self) -> float:
        """Analytic bound on the total exit rate of any state."""
        P = self.params
        return (P.lambda1 + P.lambda2) * self.n + P.mu11 * self.B1 + max(P.mu12, P.mu22) * self.B2

    def boundary_values(self, x1: float, x2: float) -> dict:
        return {
            BOUNDARY_X1: x1 + self.p,
            BOUNDARY_X2: x2 - (self.p + self.bn),
            BOUNDARY_SUM: x1 + x2 - self.bn,
        }

    def in_state_space(self, x1: float, x2: float, tol: float = 1e-12) -> bool:
        return (x1 >= self.x1_min - tol * (1 + abs(self.x1_min))
                and x2 >= self.x2_min - tol * (1 + abs(self.x2_min)))

    # serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "n": self.n,
            "B1": self.B1,
            "B2": self.B2,
            "Lambda1": self.Lambda1,
            "Lambda2": self.Lambda2,
            "psi11n": self.psi11n,
            "psi12n": self.psi12n,
            "psi22n": self.psi22n,
            "bn": self.bn,
            "kappa": self.kappa,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScaledSystem":
        sys = scale_system(SystemParams.from_dict(d["params"]), d["n"])
        for key in ("B1", "B2"):
            if key in d and d[key] != getattr(sys, key):
                raise ParameterError(f"{key}={d[key]} inconsistent with the rounding rule ({getattr(sys, key)})")
        return sys

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScaledSystem":
        return cls.from_dict(json.loads(text))


def scale_system(params: SystemParams, n: int) -> ScaledSystem:
    """System with scale ``n``: floor-rounded pools and adjusted coefficients."""
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise ParameterError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    P = params
    rn = math.sqrt(n)
    # small epsilon so that exact products like 0.5*100 are not floored down
    B1 = math.floor(P.psi11 * n + 1e-9)
    B2 = math.floor(P.psi12 * n + P.psi22 * n + P.b * rn + 1e-9)
    if B1 < 1:
        raise ParameterError(f"n={n} gives an empty pool 1 (B1=0)")
    psi11n = B1 / n
    psi22n = P.psi22
    psi12n = (P.lambda1 - psi11n * P.mu11) / P.mu12
    bn = (B2 - psi12n * n - psi22n * n) / rn
    if psi12n <= 0 or bn <= 0:
        raise ParameterError(f"n={n} too small: adjusted coefficients psi12n={psi12n}, bn={bn} not positive")
    kappa = max(n * abs(psi11n - P.psi11), n * abs(psi12n - P.psi12),
                n * abs(psi22n - P.psi22), rn * abs(bn - P.b))
    return ScaledSystem(
        params=P, n=n, B1=B1, B2=B2,
        Lambda1=P.lambda1 * n, Lambda2=P.lambda2 * n,
        psi11n=psi11n, psi12n=psi12n, psi22n=psi22n, bn=bn, kappa=kappa,
    )


# ---------------------------------------------------------------------------
# rates, maps and drifts


def service_rates(sys: ScaledSystem, s: UnscaledState) -> tuple[float, float]:
    """Total service rates (type 1, type 2) in unscaled state ``s``."""
    P = sys.params
    X1, X2 = s.X1, s.X2
    rate2 = P.mu22 * min(X2, sys.B2)
    rate1 = P.mu11 * min(X1, sys.B1) + P.mu12 * min(max(X1 - sys.B1, 0), max(sys.B2 - X2, 0))
    return float(rate1), float(rate2)


def scaled_of_unscaled(sys: ScaledSystem, s) -> ScaledState:
    X1, X2 = (s.X1, s.X2) if isinstance(s, UnscaledState) else s
    c1, c2 = sys.center
    return ScaledState((X1 - c1) / sys.sqrt_n, (X2 - c2) / sys.sqrt_n)


def unscaled_of_scaled(sys: ScaledSystem, x) -> tuple[float, float]:
    x1, x2 = (x.x1, x.x2) if isinstance(x, ScaledState) else x
    c1, c2 = sys.center
    return (c1 + sys.sqrt_n * x1, c2 + sys.sqrt_n * x2)


def nearest_lattice_state(sys: ScaledSystem, x) -> UnscaledState:
    X1, X2 = unscaled_of_scaled(sys, x)
    return UnscaledState(max(0, round(X1)), max(0, round(X2)))


def drift_unscaled(sys: ScaledSystem, X) -> np.ndarray:
    """Arrival minus service rate, defined on the whole non-negative quadrant."""
    X1, X2 = (X.X1, X.X2) if isinstance(X, UnscaledState) else X
    if X1 < 0 or X2 < 0:
        raise StateDomainError(f"({X1}, {X2}) is outside the non-negative quadrant")
    P = sys.params
    V1 = sys.Lambda1 - P.mu11 * min(X1, sys.B1) - P.mu12 * min(max(X1 - sys.B1, 0.0), max(sys.B2 - X2, 0.0))
    V2 = sys.Lambda2 - P.mu22 * min(X2, sys.B2)
    return np.array([V1, V2], dtype=float)


def drift_scaled(sys: ScaledSystem, x) -> np.ndarray:
    """Drift of the diffusion-scaled process, written directly in scaled coordinates."""
    x1, x2 = (x.x1, x.x2) if isinstance(x, ScaledState) else x
    if not sys.in_state_space(x1, x2):
        raise StateDomainError(f"({x1}, {x2}) is outside the scaled state space")
    P = sys.params
    p, b = sys.p, sys.bn
    v1 = (P.mu12 * p - P.mu11 * min(x1 + p, 0.0)
          - P.mu12 * min(max(x1 + p, 0.0), max(p + b - x2, 0.0)))
    v2 = -P.mu22 * min(x2, p + b)
    return np.array([v1, v2], dtype=float)


def boundary_tolerance(x1: float, x2: float) -> float:
    return 1e-12 * (1.0 + math.hypot(x1, x2))


def classify_domain(sys: ScaledSystem, x, tol: float | None = None) -> DomainId:
    """Domain label of an interior point, or the adjacency set of a boundary point."""
    x1, x2 = (x.x1, x.x2) if isinstance(x, ScaledState) else x
    if tol is None:
        tol = boundary_tolerance(x1, x2)
    h = sys.boundary_values(x1, x2)
    on = frozenset(k for k, v in h.items() if abs(v) <= tol)
    choices = [(-1, 1) if k in on else (1 if h[k] > 0 else -1,) for k in BOUNDARIES]
    doms = set()
    for s1 in choices[0]:
        for s2 in choices[1]:
            for s3 in choices[2]:
                d = _domain_of_signs(s1, s2, s3)
                if d is not None:
                    doms.add(d)
    doms = frozenset(doms)
    label = next(iter(doms)) if len(doms) == 1 else None
    return DomainId(label=label, adjacent=doms, boundaries=on)


def domain_piece(sys: ScaledSystem, domain: Domain) -> AffinePiece:
    return sys.pieces[Domain(domain)]


def transition_rates(sys: ScaledSystem, s: UnscaledState) -> list[tuple[UnscaledState, float]]:
    """Neighbouring lattice states with positive transition rates."""
    rate1, rate2 = service_rates(sys, s)
    out = [(UnscaledState(s.X1 + 1, s.X2), sys.Lambda1)]
    if rate1 > 0:
        out.append((UnscaledState(s.X1 - 1, s.X2), rate1))
    out.append((UnscaledState(s.X1, s.X2 + 1), sys.Lambda2))
    if rate2 > 0:
        out.append((UnscaledState(s.X1, s.X2 - 1), rate2))
    return out


def drift_from_transitions(sys: ScaledSystem, s: UnscaledState) -> np.ndarray:
    """(1/sqrt n) sum (s' - s) rate over neighbours; equals the scaled drift."""
    acc = np.zeros(2)
    for nb, rate in transition_rates(sys, s):
        acc[0] += (nb.X1 - s.X1) * rate
        acc[1] += (nb.X2 - s.X2) * rate
    return acc / sys.sqrt_n


def lattice_states(sys: ScaledSystem, X1: Iterable[int], X2: Iterable[int]):
    """Convenience generator of UnscaledState over a product grid."""
    for a in X1:
        for c in X2:
            yield UnscaledState(int(a), int(c))
