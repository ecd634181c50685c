"""The limiting diffusion of the scaled N-system and its stationary estimation.

``x2`` is an Ornstein-Uhlenbeck process and is advanced with its exact Gaussian
transition; ``x1`` uses an Euler-Maruyama step driven by the drift at the start
of the step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .ctmc import ConfigError, StationaryEstimate
from .model import SystemParams
from .stats import Interval, Marginal, mean_ci

CHUNK = 1 << 18


class BlowUpError(RuntimeError):
    pass


@dataclass(frozen=True)
class LimitField:
    mu12: float
    mu22: float
    b: float
    sigma1: float
    sigma2: float

    def drift(self, x1, x2):
        v1 = -self.mu12 * np.minimum(x1, self.b - x2)
        v2 = -self.mu22 * np.asarray(x2, dtype=float)
        return v1, v2

    @property
    def lipschitz(self) -> float:
        return 2.0 * max(self.mu12, self.mu22)

    @property
    def x2_stationary_sd(self) -> float:
        return self.sigma2 / math.sqrt(2.0 * self.mu22)

    def to_dict(self) -> dict:
        return {"mu12": self.mu12, "mu22": self.mu22, "b": self.b,
                "sigma1": self.sigma1, "sigma2": self.sigma2}


def limit_field(params: SystemParams) -> LimitField:
    P = params
    s1 = math.sqrt(P.lambda1 + P.psi11 * P.mu11 + P.psi12 * P.mu12)
    s2 = math.sqrt(P.lambda2 + P.psi22 * P.mu22)
    return LimitField(P.mu12, P.mu22, P.b, s1, s2)


@dataclass(frozen=True)
class SdeConfig:
    seed: int
    dt: float = 1e-3
    horizon: float = 1e5
    burn_in: float = 100.0
    initial: tuple = (0.0, 0.0)
    batches: int = 20
    bin_width: float = 2e-3
    half_range: float = 40.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.horizon > self.burn_in >= 0:
            raise ConfigError("need horizon > burn_in >= 0")
        if self.batches < 10:
            raise ConfigError("need at least 10 batches")

    def to_dict(self) -> dict:
        return {"seed": int(self.seed), "dt": self.dt, "horizon": self.horizon,
                "burn_in": self.burn_in, "initial": list(self.initial), "batches": self.batches,
                "bin_width": self.bin_width, "half_range": self.half_range}

    @classmethod
    def from_dict(cls, d: dict) -> "SdeConfig":
        d = dict(d)
        if "initial" in d:
            d["initial"] = tuple(d["initial"])
        return cls(**d)


@numba.njit(cache=True)
def _sde_kernel(state, z, mu12, mu22, b, s1, dt, decay, s2_step, start_step, steps_per_batch,
                nb, total_steps, acc, hist1, hist2, lo, width, limit):
    x1 = state[0]
    x2 = state[1]
    k = int(state[2])
    nbins = hist1.shape[0]
    s1dt = s1 * math.sqrt(dt)
    m = z.shape[0]
    i = 0
    status = 0
    while i < m and k < total_steps:
        if k >= start_step:
            j = (k - start_step) // steps_per_batch
            if j >= nb:
                j = nb - 1
            acc[j, 0] += 1.0
            acc[j, 1] += abs(x1) + abs(x2)
            acc[j, 2] += x1
            acc[j, 3] += x2
            acc[j, 4] += x1 * x1
            acc[j, 5] += x2 * x2
            h1 = int((x1 - lo) / width)
            h2 = int((x2 - lo) / width)
            hist1[min(max(h1, 0), nbins - 1)] += 1.0
            hist2[min(max(h2, 0), nbins - 1)] += 1.0
        v1 = -mu12 * min(x1, b - x2)
        x1 = x1 + v1 * dt + s1dt * z[i, 0]
        x2 = x2 * decay + s2_step * z[i, 1]
        if abs(x1) > limit or abs(x2) > limit or x1 != x1:
            status = 1
            break
        k += 1
        i += 1
    state[0] = x1
    state[1] = x2
    state[2] = k
    return status


def simulate_sde(field: LimitField, cfg: SdeConfig) -> StationaryEstimate:
    """Stationary time averages of the limit diffusion (sampled at the step grid)."""
    dt = cfg.dt
    total = int(round(cfg.horizon / dt))
    start = int(round(cfg.burn_in / dt))
    per_batch = (total - start) // cfg.batches
    if per_batch < 1:
        raise ConfigError("horizon too short for the requested batches")
    decay = math.exp(-field.mu22 * dt)
    s2_step = field.sigma2 * math.sqrt((1.0 - decay * decay) / (2.0 * field.mu22))
    nbins = int(round(2 * cfg.half_range / cfg.bin_width))
    lo = -cfg.half_range
    acc = np.zeros((cfg.batches, 6))
    hist1 = np.zeros(nbins)
    hist2 = np.zeros(nbins)
    state = np.array([float(cfg.initial[0]), float(cfg.initial[1]), 0.0])
    rng = np.random.Generator(np.random.PCG64(int(cfg.seed)))
    limit = 1e6
    while int(state[2]) < total:
        z = rng.standard_normal((CHUNK, 2))
        status = _sde_kernel(state, z, field.mu12, field.mu22, field.b, field.sigma1, dt, decay,
                             s2_step, start, per_batch, cfg.batches, total, acc, hist1, hist2,
                             lo, cfg.bin_width, limit)
        if status:
            raise BlowUpError(f"diffusion path exceeded |x| > {limit:g} at step {int(state[2])}")
    cnt = acc[:, 0]
    centers = lo + (np.arange(nbins) + 0.5) * cfg.bin_width
    moments = {
        "mean_x1": mean_ci(acc[:, 2] / cnt),
        "mean_x2": mean_ci(acc[:, 3] / cnt),
        "second_x1": mean_ci(acc[:, 4] / cnt),
        "second_x2": mean_ci(acc[:, 5] / cnt),
    }
    m1, m2 = moments["mean_x1"].estimate, moments["mean_x2"].estimate
    moments["var_x1"] = mean_ci(acc[:, 4] / cnt - m1 * m1)
    moments["var_x2"] = mean_ci(acc[:, 5] / cnt - m2 * m2)
    bm = acc[:, 1] / cnt
    edge = (hist1[0] + hist1[-1] + hist2[0] + hist2[-1]) / hist1.sum()
    return StationaryEstimate(
        mean_abs_scaled=mean_ci(bm),
        batch_means=bm,
        marginal1=Marginal.from_weights(centers, hist1),
        marginal2=Marginal.from_weights(centers, hist2),
        moments=moments,
        occupancy={},
        info={"dt": dt, "steps": total, "seed": int(cfg.seed), "horizon": cfg.horizon,
              "burn_in": cfg.burn_in, "batches": cfg.batches, "edge_mass": float(edge),
              "bin_width": cfg.bin_width},
    )


def step_halving_shift(field: LimitField, cfg: SdeConfig) -> dict:
    """Change of the marginal means when ``dt`` is halved, against the statistical CI."""
    from dataclasses import replace
    a = simulate_sde(field, cfg)
    b = simulate_sde(field, replace(cfg, dt=cfg.dt / 2.0))
    out = {}
    for key in ("mean_x1", "mean_x2"):
        ia, ib = a.moments[key], b.moments[key]
        hw = math.hypot(ia.half_width, ib.half_width)
        out[key] = {"shift": ib.estimate - ia.estimate, "ci": hw,
                    "ok": abs(ib.estimate - ia.estimate) < 2.0 * hw}
    return out


__all__ = ["LimitField", "limit_field", "SdeConfig", "simulate_sde", "step_halving_shift",
           "BlowUpError", "Interval"]
