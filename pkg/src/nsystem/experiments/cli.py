"""``nsystem`` command line: run campaigns and write their reports."""
from __future__ import annotations

import argparse
import json
import sys

from .campaigns import CAMPAIGNS
from .config import ExperimentConfig, ExperimentConfigError
from .report import write_report

ORDER = ("simulate", "dfl", "lyapunov", "tightness", "interchange", "renewal")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nsystem", description=__doc__)
    p.add_argument("command", choices=ORDER + ("all",))
    p.add_argument("--config", help="JSON experiment document (defaults are merged in)")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="root seed, unsigned 64-bit (overrides root_seed)")
    p.add_argument("--workers", type=int, default=1, help="worker processes for independent cells")
    p.add_argument("--format", choices=("json", "csv"), default="json",
                   help="summary printed to stdout")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.from_dict({})
        over = {}
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ExperimentConfigError("--seed must be an unsigned 64-bit integer")
            over["root_seed"] = args.seed
        if args.out:
            over["output_dir"] = args.out
        if over:
            cfg = cfg.with_overrides(**over)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    names = ORDER if args.command == "all" else (args.command,)
    ok = True
    for name in names:
        rep = CAMPAIGNS[name](cfg, workers=args.workers)
        write_report(rep, cfg.output_dir, args.format)
        if args.format == "csv":
            sys.stdout.write(rep.csv())
        else:
            sys.stdout.write(json.dumps({"campaign": name, "passed": rep.passed,
                                         "verdicts": [v.to_dict() for v in rep.verdicts]},
                                        sort_keys=True) + "\n")
        for v in rep.verdicts:
            print(f"[{v.status}] {name}: {v.rule}", file=sys.stderr)
        ok = ok and rep.passed
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
