#!/usr/bin/env python3
"""Explore the tiny reconfiguration scenario and the three mutation fixtures."""
import time
from pathlib import Path

from pdcc.explore import explore, replay
from pdcc.checker import audit
from pdcc.simnet import load_scenario

ROOT = Path(__file__).resolve().parent.parent
NAMES = ("explore_tiny", "mutant_epoch_check", "mutant_locked_value", "mutant_learner_gate")


def main() -> None:
    for name in NAMES:
        sc = load_scenario(ROOT / "scenarios" / f"{name}.json")
        t0 = time.perf_counter()
        res = explore(sc)
        line = f"{name:22s} {res.verdict:4s} states={res.states} walks={res.walks}"
        if res.witness:
            offline = audit(replay(sc, res.witness["actions"]).trace)
            again = res.witness["property"] in {v.property for v in offline.violations}
            line += (f" {res.witness['property']} after {len(res.witness['actions'])} actions"
                     f" (replay {'reproduces' if again else 'DOES NOT reproduce'})")
        print(f"{line} [{time.perf_counter() - t0:.1f} s]")


if __name__ == "__main__":
    main()
