"""Campaign configuration: one JSON document rooted at the system parameters."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

from ..dfl import AlphaRegion, AlphaRegionError
from ..model import SystemParams, make_params, scale_system

P0 = {"mu11": 1.0, "mu12": 2.0, "mu22": 1.0, "psi11": 1.0, "psi12": 0.5, "psi22": 1.0, "b": 1.0}
EQUAL_RATES = {"mu11": 1.0, "mu12": 1.0, "mu22": 1.0, "psi11": 1.0, "psi12": 1.0, "psi22": 1.0, "b": 1.0}

DEFAULTS = {
    "params": P0,
    "n_list": [25, 100, 400, 1600],
    "root_seed": 20240101,
    "output_dir": "results",
    "simulate": {"horizon": 2.0e4, "burn_in": 100.0, "batches": 20},
    "tightness": {"horizon": 2.0e4, "burn_in": 100.0, "batches": 20,
                  "ratio_limit": 1.5, "trend_level": 0.05},
    "interchange": {
        "ctmc": {"horizon": 2.0e4, "burn_in": 100.0, "batches": 20},
        "sde": {"dt": 1e-3, "horizon": 1.0e5, "burn_in": 100.0, "batches": 20},
        "ks_limit": 0.05, "ks_normal_limit": 0.01,
    },
    "lyapunov": {
        "n_list": [25, 100, 400],
        "param_sets": [P0, EQUAL_RATES],
        "C": 1.0, "delta": 1e-4, "atol": 1e-10, "rtol": 1e-13,
        "grid": {"radii": [1, 2, 5, 10, 20, 50], "angles": 16, "random": 904, "radius_max": 50.0},
        "drift_identity_tol": 1e-6,
        "fd_states": 200, "fd_delta": 1e-5, "fd_tol": 1e-4,
        "drift_states": 200, "drift_g_min": 10.0, "drift_radius_max": 60.0,
        "second_diff_growth_limit": 2.0,
    },
    "dfl": {
        "n_list": [25, 100, 400],
        "starts": 1000, "radius_min": 1.0, "radius_max": 100.0,
        "band": [1.0, 2.0], "stability": 0.2,
        "generic_starts": 100, "generic_tol": 1e-7, "closed_form_tol": 1e-10,
    },
    "renewal": {"n_list": [25, 100], "horizon": 2.0e4, "burn_in": 100.0, "level": "center"},
}


class ExperimentConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "params":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_n_list(ns, where):
    if not ns:
        raise ExperimentConfigError(f"{where}: n_list is empty")
    if any(int(n) != n or n < 1 for n in ns):
        raise ExperimentConfigError(f"{where}: n_list entries must be positive integers")
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ExperimentConfigError(f"{where}: n_list must be strictly increasing")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated campaign configuration; ``doc`` is the full JSON document."""

    doc: dict = field(repr=False)

    @staticmethod
    def from_dict(d: dict | None = None) -> "ExperimentConfig":
        doc = _merge(DEFAULTS, d or {})
        _check_n_list(doc["n_list"], "n_list")
        SystemParams.from_dict(doc["params"])
        ly = doc["lyapunov"]
        _check_n_list(ly["n_list"], "lyapunov.n_list")
        for ps in ly["param_sets"]:
            P = SystemParams.from_dict(ps)
            for n in ly["n_list"]:
                try:
                    AlphaRegion.for_system(scale_system(P, int(n)))
                except AlphaRegionError as exc:
                    raise ExperimentConfigError(f"lyapunov: {exc}") from None
        _check_n_list(doc["dfl"]["n_list"], "dfl.n_list")
        _check_n_list(doc["renewal"]["n_list"], "renewal.n_list")
        return ExperimentConfig(doc)

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(json.loads(text))

    @staticmethod
    def load(path) -> "ExperimentConfig":
        with open(path) as fh:
            return ExperimentConfig.from_json(fh.read())

    def with_overrides(self, **over) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(_merge(self.doc, over))

    @property
    def params(self) -> SystemParams:
        return SystemParams.from_dict(self.doc["params"])

    @property
    def n_list(self) -> list:
        return [int(n) for n in self.doc["n_list"]]

    @property
    def root_seed(self) -> int:
        return int(self.doc["root_seed"])

    @property
    def output_dir(self) -> str:
        return self.doc["output_dir"]

    def section(self, name: str) -> dict:
        return self.doc[name]

    def canonical_json(self) -> str:
        return json.dumps(self.doc, sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def param_sets(cfg: ExperimentConfig) -> list:
    return [make_params(**{k: ps[k] for k in ("mu11", "mu12", "mu22", "psi11", "psi12", "psi22", "b")})
            for ps in cfg.section("lyapunov")["param_sets"]]
