"""Campaign reports and their on-disk emission (JSON, JSON-lines, CSV, plot script)."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy

from .. import __version__

PASS, FAIL, NOT_RUN = "pass", "fail", "not-run"


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class Verdict:
    rule: str
    measured: object
    threshold: object
    status: str
    reason: str = ""

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_dict(self) -> dict:
        return _clean({"rule": self.rule, "measured": self.measured, "threshold": self.threshold,
                       "status": self.status, "reason": self.reason})


def check(rule: str, measured, threshold, ok: bool, reason: str = "") -> Verdict:
    return Verdict(rule, measured, threshold, PASS if ok else FAIL, reason)


def not_run(rule: str, reason: str) -> Verdict:
    return Verdict(rule, None, None, NOT_RUN, reason)


@dataclass
class Report:
    campaign: str
    per_n: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    records: list = field(default_factory=list)  # JSON-lines payload
    table: list = field(default_factory=list)  # CSV rows (dicts)
    timing: dict = field(default_factory=dict)  # sidecar only

    @property
    def passed(self) -> bool:
        """True when no verdict failed (not-run checks do not count as passes)."""
        return all(v.status != FAIL for v in self.verdicts) and any(v.passed for v in self.verdicts)

    def verdict(self, rule: str) -> Verdict:
        for v in self.verdicts:
            if v.rule == rule:
                return v
        raise KeyError(rule)

    def to_dict(self) -> dict:
        return _clean({
            "campaign": self.campaign,
            "passed": self.passed,
            "per_n": self.per_n,
            "constants": self.constants,
            "verdicts": [v.to_dict() for v in self.verdicts],
            "warnings": list(self.warnings),
            "provenance": self.provenance,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def jsonl(self) -> str:
        return "".join(json.dumps(_clean(r), sort_keys=True) + "\n" for r in self.records)

    def csv(self) -> str:
        if not self.table:
            return ""
        keys = []
        for row in self.table:
            for k in row:
                if k not in keys:
                    keys.append(k)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for row in self.table:
            w.writerow(_clean(row))
        return buf.getvalue()


def provenance(cfg, seed: int) -> dict:
    return {
        "config_sha256": cfg.sha256(),
        "root_seed": int(seed),
        "versions": {"nsystem": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "numba": numba.__version__, "python": platform.python_version()},
    }


PLOT_SCRIPT = '''"""Plot the CSV summary of the {campaign} campaign (requires matplotlib)."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{campaign}.csv"
with open(path) as fh:
    rows = list(csv.DictReader(fh))
if not rows:
    sys.exit("empty table")
x_key = "{x_key}"
cols = [k for k in rows[0] if k != x_key]
numeric = []
for k in cols:
    try:
        [float(r[k]) for r in rows]
        numeric.append(k)
    except (TypeError, ValueError):
        pass
fig, axes = plt.subplots(len(numeric), 1, figsize=(6, 2.2 * max(len(numeric), 1)), squeeze=False)
xs = [float(r[x_key]) if x_key in r else i for i, r in enumerate(rows)]
for ax, k in zip(axes[:, 0], numeric):
    ax.plot(xs, [float(r[k]) for r in rows], "o")
    ax.set_ylabel(k, fontsize=7)
    ax.set_xscale("log" if x_key == "n" else "linear")
axes[-1, 0].set_xlabel(x_key)
fig.tight_layout()
fig.savefig("{campaign}.png", dpi=120)
'''


def write_report(report: Report, out_dir: str, fmt: str = "json") -> dict:
    """Write report files; timestamps go to a sidecar so the report stays reproducible."""
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, report.campaign)
    paths = {"report": base + ".json", "records": base + ".jsonl", "csv": base + ".csv",
             "plot": os.path.join(out_dir, f"plot_{report.campaign}.py"),
             "sidecar": base + ".timestamps.json"}
    with open(paths["report"], "w") as fh:
        fh.write(report.to_json())
    with open(paths["records"], "w") as fh:
        fh.write(report.jsonl())
    with open(paths["csv"], "w") as fh:
        fh.write(report.csv())
    x_key = "n" if report.table and "n" in report.table[0] else "index"
    with open(paths["plot"], "w") as fh:
        fh.write(PLOT_SCRIPT.format(campaign=report.campaign, x_key=x_key))
    with open(paths["sidecar"], "w") as fh:
        json.dump({"written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                   **_clean(report.timing)}, fh)
        fh.write("\n")
    return paths
