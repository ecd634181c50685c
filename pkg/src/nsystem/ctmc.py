"""Event-driven simulation of the unscaled N-system chain and a truncated exact solve.

The simulator samples competing exponentials (total rate, then which event)
with uniforms drawn in chunks from a numpy ``Generator`` and consumed by a
compiled kernel. Time averages after burn-in are split into equal batches for
batch-means confidence intervals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .model import Domain, ScaledSystem, UnscaledState
from .stats import Interval, Marginal, mean_ci

CHUNK = 1 << 18


class ConfigError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


class TruncationError(RuntimeError):
    def __init__(self, boundary_mass: float, threshold: float):
        super().__init__(f"boundary-layer mass {boundary_mass:.3e} exceeds {threshold:.0e}; enlarge the box")
        self.boundary_mass = boundary_mass


class InsufficientDataError(RuntimeError):
    pass


def default_initial(sys: ScaledSystem) -> UnscaledState:
    P = sys.params
    return UnscaledState(int(round((P.psi11 + P.psi12) * sys.n)), int(round(P.psi22 * sys.n)))


@dataclass(frozen=True)
class SimConfig:
    seed: int
    horizon: float
    burn_in: float
    batches: int = 20
    initial: UnscaledState | None = None
    joint: bool = False

    def __post_init__(self):
        if not (self.horizon > self.burn_in > 0):
            raise ConfigError("need horizon > burn_in > 0")
        if self.batches < 10:
            raise ConfigError("need at least 10 batches")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return {"seed": int(self.seed), "horizon": self.horizon, "burn_in": self.burn_in,
                "batches": self.batches, "joint": self.joint,
                "initial": None if self.initial is None else [self.initial.X1, self.initial.X2]}

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        init = d.get("initial")
        return cls(seed=int(d["seed"]), horizon=float(d["horizon"]), burn_in=float(d["burn_in"]),
                   batches=int(d.get("batches", 20)), joint=bool(d.get("joint", False)),
                   initial=None if init is None else UnscaledState(int(init[0]), int(init[1])))


@dataclass(frozen=True)
class StationaryEstimate:
    """Time-average summaries of a stationary run (CTMC or diffusion)."""

    mean_abs_scaled: Interval
    batch_means: np.ndarray
    marginal1: Marginal
    marginal2: Marginal
    moments: dict
    occupancy: dict
    joint: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def to_dict(self, with_marginals: bool = False) -> dict:
        d = {
            "mean_abs_scaled": self.mean_abs_scaled.to_dict(),
            "batch_means": self.batch_means.tolist(),
            "moments": {k: v.to_dict() for k, v in self.moments.items()},
            "occupancy": dict(self.occupancy),
            "info": dict(self.info),
        }
        if with_marginals:
            d["marginal1"] = self.marginal1.to_dict()
            d["marginal2"] = self.marginal2.to_dict()
        return d


@dataclass(frozen=True)
class RenewalStats:
    mean_cycle_T: float
    mean_arrivals_A: float
    mean_potential_services_S: float
    cycle_count: int
    level: int
    cycles: np.ndarray = field(repr=False, compare=False)  # rows (T, A, S)

    def to_dict(self) -> dict:
        return {"mean_cycle_T": self.mean_cycle_T, "mean_arrivals_A": self.mean_arrivals_A,
                "mean_potential_services_S": self.mean_potential_services_S,
                "cycle_count": self.cycle_count, "level": self.level}


# ---------------------------------------------------------------------------
# kernels

_ACC = 6  # time, |x1|+|x2|, x1, x2, x1^2, x2^2


@numba.njit(cache=True)
def _domain_code(X1, X2, B1, B2):
    # lowest-index domain whose closure holds the lattice point
    if X1 >= B1:
        if X1 + X2 <= B1 + B2:
            return 0
        if X2 <= B2:
            return 1
        return 2
    if X2 <= B2:
        return 3
    return 4


@numba.njit(cache=True)
def _sim_kernel(state, u, lam1, lam2, mu11, mu12, mu22, B1, B2, c1, c2, sqn, bound,
                t_burn, batch_len, nb, t_stop, acc, occ, hist1, hist2, joint):
    X1 = int(state[0])
    X2 = int(state[1])
    t = state[2]
    nevents = 0
    status = 0
    n1 = hist1.shape[0]
    n2 = hist2.shape[0]
    j1 = joint.shape[0]
    j2 = joint.shape[1]
    m = u.shape[0]
    i = 0
    while i < m:
        r1 = mu11 * min(X1, B1) + mu12 * min(max(X1 - B1, 0), max(B2 - X2, 0))
        r2 = mu22 * min(X2, B2)
        R = lam1 + lam2 + r1 + r2
        if R > bound:
            status = 2
            break
        t1 = t - math.log(1.0 - u[i, 0]) / R
        if t1 > t_burn:
            a = max(t, t_burn)
            e_all = min(t1, t_stop)
            w_all = e_all - a
            xh1 = (X1 - c1) / sqn
            xh2 = (X2 - c2) / sqn
            dom = _domain_code(X1, X2, B1, B2)
            while a < e_all:
                k = int((a - t_burn) / batch_len)
                if k >= nb:
                    k = nb - 1
                e = t_burn + (k + 1) * batch_len
                if e <= a and k < nb - 1:
                    k += 1
                    e = t_burn + (k + 1) * batch_len
                if k == nb - 1 or e > e_all:
                    e = e_all
                w = e - a
                acc[k, 0] += w
                acc[k, 1] += w * (abs(xh1) + abs(xh2))
                acc[k, 2] += w * xh1
                acc[k, 3] += w * xh2
                acc[k, 4] += w * xh1 * xh1
                acc[k, 5] += w * xh2 * xh2
                occ[k, dom] += w
                a = e
            hist1[min(X1, n1 - 1)] += w_all
            hist2[min(X2, n2 - 1)] += w_all
            if j1 > 1 and X1 < j1 and X2 < j2:
                joint[X1, X2] += w_all
        t = t1
        if t >= t_stop:
            break
        v = u[i, 1] * R
        if v < lam1:
            X1 += 1
        elif v < lam1 + r1:
            X1 -= 1
        elif v < lam1 + r1 + lam2:
            X2 += 1
        else:
            X2 -= 1
        nevents += 1
        i += 1
        if X1 < 0 or X2 < 0:
            status = 1
            break
    state[0] = X1
    state[1] = X2
    state[2] = t
    return i, nevents, status


@numba.njit(cache=True)
def _renewal_kernel(state, u, lam1, lam2, mu11, mu12, mu22, B1, B2, bound, level,
                    t_burn, t_stop, cycles, open_cycle):
    # open_cycle: [is_open, t_start, A, S]; cycles rows (T, A, S)
    X1 = int(state[0])
    X2 = int(state[1])
    t = state[2]
    ncyc = int(state[3])
    status = 0
    m = u.shape[0]
    cap = cycles.shape[0]
    i = 0
    pot = mu11 * B1
    while i < m and ncyc < cap:
        r1 = mu11 * min(X1, B1) + mu12 * min(max(X1 - B1, 0), max(B2 - X2, 0))
        r2 = mu22 * min(X2, B2)
        R = lam1 + lam2 + r1 + r2
        if R > bound:
            status = 2
            break
        t1 = t - math.log(1.0 - u[i, 0]) / R
        if t1 >= t_stop:
            t = t_stop
            break
        if open_cycle[0] > 0.0:
            open_cycle[3] += (t1 - t) * (pot + mu12 * (B2 - min(X2, B2)))
        t = t1
        v = u[i, 1] * R
        old2 = X2
        if v < lam1:
            X1 += 1
            if open_cycle[0] > 0.0:
                open_cycle[2] += 1.0
        elif v < lam1 + r1:
            X1 -= 1
        elif v < lam1 + r1 + lam2:
            X2 += 1
        else:
            X2 -= 1
        i += 1
        if X1 < 0 or X2 < 0:
            status = 1
            break
        if X2 == level and old2 != level and t >= t_burn:
            if open_cycle[0] > 0.0:
                cycles[ncyc, 0] = t - open_cycle[1]
                cycles[ncyc, 1] = open_cycle[2]
                cycles[ncyc, 2] = open_cycle[3]
                ncyc += 1
            open_cycle[0] = 1.0
            open_cycle[1] = t
            open_cycle[2] = 0.0
            open_cycle[3] = 0.0
    state[0] = X1
    state[1] = X2
    state[2] = t
    state[3] = ncyc
    return i, status


def _rates(sys: ScaledSystem):
    P = sys.params
    return float(sys.Lambda1), float(sys.Lambda2), P.mu11, P.mu12, P.mu22


def _check_status(status, t):
    if status == 1:
        raise SimulationError(f"state left the non-negative lattice at t={t}")
    if status == 2:
        raise SimulationError(f"total event rate exceeded its analytic bound at t={t}")


def histogram_sizes(sys: ScaledSystem) -> tuple[int, int]:
    c1, c2 = sys.center
    pad = 60.0 * sys.sqrt_n + 100.0
    return int(c1 + pad), int(c2 + pad)


def simulate(sys: ScaledSystem, cfg: SimConfig, joint_shape: tuple | None = None) -> StationaryEstimate:
    """Stationary time averages of the scaled state, with batch-means intervals."""
    init = cfg.initial or default_initial(sys)
    batch_len = (cfg.horizon - cfg.burn_in) / cfg.batches
    if not batch_len > 0:
        raise ConfigError("horizon too short for the requested batches")
    lam1, lam2, mu11, mu12, mu22 = _rates(sys)
    c1, c2 = sys.center
    n1, n2 = histogram_sizes(sys)
    acc = np.zeros((cfg.batches, _ACC))
    occ = np.zeros((cfg.batches, 5))
    hist1 = np.zeros(n1)
    hist2 = np.zeros(n2)
    if cfg.joint or joint_shape is not None:
        joint = np.zeros(joint_shape or (n1, n2))
    else:
        joint = np.zeros((1, 1))
    state = np.array([init.X1, init.X2, 0.0])
    rng = np.random.Generator(np.random.PCG64(int(cfg.seed)))
    events = 0
    bound = sys.rate_bound * (1.0 + 1e-12)
    while state[2] < cfg.horizon:
        u = rng.random((CHUNK, 2))
        _, ne, status = _sim_kernel(state, u, lam1, lam2, mu11, mu12, mu22, sys.B1, sys.B2,
                                    c1, c2, sys.sqrt_n, bound, cfg.burn_in, batch_len,
                                    cfg.batches, cfg.horizon, acc, occ, hist1, hist2, joint)
        events += ne
        _check_status(status, state[2])
    T = acc[:, 0]
    bm = acc[:, 1] / T
    moments = {
        "mean_x1": mean_ci(acc[:, 2] / T),
        "mean_x2": mean_ci(acc[:, 3] / T),
        "second_x1": mean_ci(acc[:, 4] / T),
        "second_x2": mean_ci(acc[:, 5] / T),
    }
    m1, m2 = moments["mean_x1"].estimate, moments["mean_x2"].estimate
    moments["var_x1"] = mean_ci(acc[:, 4] / T - m1 * m1)
    moments["var_x2"] = mean_ci(acc[:, 5] / T - m2 * m2)
    sqn = sys.sqrt_n
    marg1 = Marginal.from_weights((np.arange(n1) - c1) / sqn, hist1)
    marg2 = Marginal.from_weights((np.arange(n2) - c2) / sqn, hist2)
    occ_tot = occ.sum(axis=0) / occ.sum()
    jt = None
    if joint.shape != (1, 1):
        jt = joint / joint.sum()
    return StationaryEstimate(
        mean_abs_scaled=mean_ci(bm),
        batch_means=bm,
        marginal1=marg1,
        marginal2=marg2,
        moments=moments,
        occupancy={Domain(k).name: float(occ_tot[k]) for k in range(5)},
        joint=jt,
        info={"n": sys.n, "events": int(events), "seed": int(cfg.seed), "horizon": cfg.horizon,
              "burn_in": cfg.burn_in, "batches": cfg.batches,
              "clipped_mass": float((hist1[-1] + hist2[-1]) / hist1.sum())},
    )


def lattice_pmf(marginal: Marginal, sys: ScaledSystem, coord: int, size: int) -> np.ndarray:
    """Unscaled pmf on ``0..size-1`` from a scaled lattice marginal."""
    c = sys.center[coord]
    idx = np.rint(marginal.values * sys.sqrt_n + c).astype(int)
    out = np.zeros(size)
    ok = (idx >= 0) & (idx < size)
    np.add.at(out, idx[ok], marginal.weights[ok])
    return out


# ---------------------------------------------------------------------------
# exact oracles


@dataclass(frozen=True)
class OracleDistribution:
    pmf: np.ndarray  # indexed [X1, X2]
    boundary_mass: float
    residual: float
    method: str

    @property
    def marginal1(self) -> np.ndarray:
        return self.pmf.sum(axis=1)

    @property
    def marginal2(self) -> np.ndarray:
        return self.pmf.sum(axis=0)


def _generator_matrix(sys: ScaledSystem, N1: int, N2: int):
    lam1, lam2, mu11, mu12, mu22 = _rates(sys)
    B1, B2 = sys.B1, sys.B2
    X1, X2 = np.meshgrid(np.arange(N1), np.arange(N2), indexing="ij")
    X1 = X1.ravel()
    X2 = X2.ravel()
    idx = X1 * N2 + X2
    r1 = mu11 * np.minimum(X1, B1) + mu12 * np.minimum(np.maximum(X1 - B1, 0), np.maximum(B2 - X2, 0))
    r2 = mu22 * np.minimum(X2, B2)
    rows, cols, vals = [], [], []
    # moves leaving the box become self-loops, i.e. are dropped from the generator
    for ok, dst, rate in (
        (X1 + 1 < N1, idx + N2, np.full(idx.size, lam1)),
        (X1 > 0, idx - N2, r1),
        (X2 + 1 < N2, idx + 1, np.full(idx.size, lam2)),
        (X2 > 0, idx - 1, r2),
    ):
        sel = ok & (rate > 0)
        rows.append(idx[sel])
        cols.append(dst[sel])
        vals.append(rate[sel])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    N = N1 * N2
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
    out = np.asarray(Q.sum(axis=1)).ravel()
    Q = Q - sp.diags(out)
    return Q.tocsr(), out


def oracle_stationary(sys: ScaledSystem, trunc: tuple[int, int], method: str = "direct",
                      threshold: float = 1e-6, tol: float = 1e-12,
                      max_iter: int = 200000) -> OracleDistribution:
    """Stationary law of the chain reflected into ``{0..X1max} x {0..X2max}``.

    ``method='direct'`` solves the balance equations with a sparse LU;
    ``method='power'`` iterates the uniformized kernel to residual ``tol``.
    The mass on the outer layer of the box is returned as a truncation
    diagnostic and must stay below ``threshold``.
    """
    X1max, X2max = int(trunc[0]), int(trunc[1])
    N1, N2 = X1max + 1, X2max + 1
    if N1 * N2 > 10 ** 6:
        raise ConfigError(f"box has {N1 * N2} states (limit 1e6)")
    c1, c2 = sys.center
    margin = 10.0 * sys.sqrt_n
    if X1max < c1 + margin or X2max < c2 + margin:
        raise ConfigError("truncation box needs a margin of 10 sqrt(n) beyond the equilibrium point")
    Q, out = _generator_matrix(sys, N1, N2)
    N = N1 * N2
    if method == "direct":
        A = Q.T.tolil()
        A[0, :] = np.ones(N)
        rhs = np.zeros(N)
        rhs[0] = 1.0
        pi = spsolve(A.tocsc(), rhs)
    elif method == "power":
        lam = out.max() * 1.001
        P = (sp.identity(N, format="csr") + Q / lam).T.tocsr()
        pi = np.full(N, 1.0 / N)
        for _ in range(max_iter):
            new = P @ pi
            new /= new.sum()
            if np.abs(new - pi).sum() < tol:
                pi = new
                break
            pi = new
        else:
            raise RuntimeError("power iteration did not converge")
    else:
        raise ValueError(f"unknown method {method!r}")
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum()
    residual = float(np.abs(Q.T @ pi).max())
    pmf = pi.reshape(N1, N2)
    layer = float(pmf[-1, :].sum() + pmf[:, -1].sum() - pmf[-1, -1])
    if layer > threshold:
        raise TruncationError(layer, threshold)
    return OracleDistribution(pmf, layer, residual, method)


def birth_death_pmf(sys: ScaledSystem, kmax: int | None = None) -> np.ndarray:
    """Type-2 stationary law: birth rate Lambda2, death rate mu22 min(k, B2)."""
    lam2 = float(sys.Lambda2)
    mu22 = sys.params.mu22
    if kmax is None:
        kmax = int(sys.center[1] + 60.0 * sys.sqrt_n + 100)
    k = np.arange(1, kmax + 1)
    logr = math.log(lam2) - np.log(mu22 * np.minimum(k, sys.B2))
    logp = np.concatenate([[0.0], np.cumsum(logr)])
    logp -= logp.max()
    p = np.exp(logp)
    return p / p.sum()


# ---------------------------------------------------------------------------
# renewal cycles


def renewal_cycles(sys: ScaledSystem, cfg: SimConfig, level: int = 0,
                   max_cycles: int = 10 ** 7) -> RenewalStats:
    """Cycles between successive entries of ``X2`` into ``level``.

    Per cycle: duration ``T``, type-1 arrivals ``A`` and the integral ``S``
    of ``mu11 B1 + mu12 (B2 - X2 ^ B2)``. Cycles start after burn-in.
    """
    init = cfg.initial or default_initial(sys)
    lam1, lam2, mu11, mu12, mu22 = _rates(sys)
    cycles = np.zeros((min(max_cycles, 1 << 16), 3))
    open_cycle = np.zeros(4)
    state = np.array([init.X1, init.X2, 0.0, 0.0])
    rng = np.random.Generator(np.random.PCG64(int(cfg.seed)))
    bound = sys.rate_bound * (1.0 + 1e-12)
    while state[2] < cfg.horizon and int(state[3]) < max_cycles:
        if int(state[3]) >= cycles.shape[0]:
            cycles = np.concatenate([cycles, np.zeros_like(cycles)])[:max_cycles]
        u = rng.random((CHUNK, 2))
        _, status = _renewal_kernel(state, u, lam1, lam2, mu11, mu12, mu22, sys.B1, sys.B2, bound,
                                    int(level), cfg.burn_in, cfg.horizon, cycles, open_cycle)
        _check_status(status, state[2])
    k = int(state[3])
    if k < 1:
        raise InsufficientDataError(
            f"no completed cycle at level X2={level} within horizon {cfg.horizon}")
    c = cycles[:k]
    return RenewalStats(float(c[:, 0].mean()), float(c[:, 1].mean()), float(c[:, 2].mean()),
                        k, int(level), c.copy())


def renewal_residuals(sys: ScaledSystem, stats: RenewalStats, level: float = 0.95) -> dict:
    """Per-cycle residuals of the two renewal identities with t-intervals.

    ``A - lambda1 n T`` and ``(A - S) + bn mu12 sqrt(n) T`` both have mean zero.
    """
    T, A, S = stats.cycles.T
    P = sys.params
    r1 = A - P.lambda1 * sys.n * T
    r2 = (A - S) + sys.bn * P.mu12 * sys.sqrt_n * T
    if stats.cycle_count < 2:
        raise InsufficientDataError("need at least two cycles for intervals")
    i1, i2 = mean_ci(r1, level), mean_ci(r2, level)
    return {"arrivals": i1, "services": i2,
            "arrivals_ok": i1.contains(0.0), "services_ok": i2.contains(0.0)}
