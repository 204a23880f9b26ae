#!/usr/bin/env python3
"""Run every Byzantine catalog scenario over a seed range and tabulate verdicts.

    python3 scripts/sweep_catalog.py --seeds 100
"""
import argparse
import time
from pathlib import Path

from pdcc.checker import Auditor
from pdcc.simnet import Simulation, load_scenario

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--scenarios", nargs="*", default=None,
                    help="scenario files (default: scenarios/catalog_*.json)")
    args = ap.parse_args()
    paths = args.scenarios or sorted((ROOT / "scenarios").glob("catalog_*.json"))
    for path in paths:
        sc = load_scenario(path)
        t0 = time.perf_counter()
        failed = {}
        for seed in range(args.seeds):
            auditor = Auditor()
            Simulation(sc, seed, keep_trace=False, auditor=auditor, annotate=False).run()
            for prop, v in auditor.verdicts().items():
                if not v.ok:
                    failed.setdefault(prop, []).append(seed)
        dt = time.perf_counter() - t0
        status = "ok" if not failed else "; ".join(f"{p}: seeds {s[:5]}" for p, s in failed.items())
        print(f"{sc.name:34s} {args.seeds:4d} seeds {dt:6.1f} s  {status}")


if __name__ == "__main__":
    main()
