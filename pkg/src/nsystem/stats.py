"""Output analysis shared by the simulators: weighted marginals, batch means, KS/TV, seeds."""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps


@dataclass(frozen=True)
class Marginal:
    """A one-dimensional distribution as weighted atoms (sorted values, weights summing to 1)."""

    values: np.ndarray
    weights: np.ndarray

    @staticmethod
    def from_weights(values, weights) -> "Marginal":
        values = np.asarray(values, dtype=float)
        weights = np.asarray(weights, dtype=float)
        keep = weights > 0
        values, weights = values[keep], weights[keep]
        order = np.argsort(values, kind="stable")
        values, weights = values[order], weights[order]
        total = weights.sum()
        if not total > 0:
            raise ValueError("marginal has no mass")
        return Marginal(values, weights / total)

    def cdf(self, x):
        c = np.cumsum(self.weights)
        idx = np.searchsorted(self.values, x, side="right")
        return np.where(idx > 0, c[np.maximum(idx - 1, 0)], 0.0)

    @property
    def mean(self) -> float:
        return float(self.values @ self.weights)

    @property
    def var(self) -> float:
        m = self.mean
        return float(((self.values - m) ** 2) @ self.weights)

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "weights": self.weights.tolist()}

    @staticmethod
    def from_dict(d) -> "Marginal":
        return Marginal.from_weights(d["values"], d["weights"])


def ks_distance(a: Marginal, b: Marginal) -> float:
    """Exact sup-distance between the CDFs of two atomic distributions."""
    pts = np.union1d(a.values, b.values)
    d = np.abs(a.cdf(pts) - b.cdf(pts))
    return float(d.max()) if d.size else 0.0


def ks_to_cdf(a: Marginal, cdf) -> float:
    """Sup-distance between an atomic distribution and a continuous CDF.

    Both one-sided limits at each atom are checked.
    """
    F = cdf(a.values)
    right = np.cumsum(a.weights)
    left = right - a.weights
    return float(max(np.max(np.abs(right - F)), np.max(np.abs(left - F))))


def ks_normal(a: Marginal, mean: float = 0.0, sd: float = 1.0) -> float:
    return ks_to_cdf(a, lambda x: sps.norm.cdf(x, loc=mean, scale=sd))


def ks_critical_two_sample(n1: float, n2: float, level: float = 0.05) -> float:
    """Asymptotic two-sample KS critical value ``c(level) sqrt((n1+n2)/(n1 n2))``."""
    c = math.sqrt(-0.5 * math.log(level / 2.0))
    return c * math.sqrt((n1 + n2) / (n1 * n2))


def total_variation(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        shape = tuple(max(a, b) for a, b in zip(p.shape, q.shape))
        p = _pad(p, shape)
        q = _pad(q, shape)
    return 0.5 * float(np.abs(p - q).sum())


def _pad(a, shape):
    out = np.zeros(shape)
    out[tuple(slice(0, s) for s in a.shape)] = a
    return out


@dataclass(frozen=True)
class Interval:
    estimate: float
    half_width: float

    @property
    def lo(self) -> float:
        return self.estimate - self.half_width

    @property
    def hi(self) -> float:
        return self.estimate + self.half_width

    def contains(self, v: float) -> bool:
        return self.lo <= v <= self.hi

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "half_width": self.half_width}


def mean_ci(samples, level: float = 0.95) -> Interval:
    """Student-t interval for the mean of (approximately) iid samples."""
    x = np.asarray(samples, dtype=float)
    k = x.size
    if k < 2:
        raise ValueError("need at least two samples for a confidence interval")
    sd = x.std(ddof=1)
    q = sps.t.ppf(0.5 + level / 2.0, k - 1)
    return Interval(float(x.mean()), float(q * sd / math.sqrt(k)))


def ratio_ci(num, den, level: float = 0.95) -> Interval:
    """Delta-method interval for ``sum(num) / sum(den)`` over iid pairs."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    k = num.size
    r = num.sum() / den.sum()
    resid = num - r * den
    se = resid.std(ddof=1) / (den.mean() * math.sqrt(k))
    q = sps.t.ppf(0.5 + level / 2.0, k - 1)
    return Interval(float(r), float(q * se))


def kendall_trend(x, y) -> dict:
    """One-sided Kendall tau test for a positive trend of ``y`` in ``x``."""
    if len(x) < 3:
        return {"tau": float("nan"), "p_value": 1.0}
    res = sps.kendalltau(x, y, alternative="greater")
    return {"tau": float(res.statistic), "p_value": float(res.pvalue)}


def derive_seed(root: int, label: str, index: int = 0) -> int:
    """64-bit child seed: BLAKE2b-64 of (root, label, index)."""
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", int(root) & 0xFFFFFFFFFFFFFFFF))
    h.update(label.encode())
    h.update(struct.pack("<q", int(index)))
    return int.from_bytes(h.digest(), "little")
