#!/usr/bin/env python3
"""Regenerate the golden trace used by the determinism tests."""
from pathlib import Path

from pdcc.simnet import Simulation, load_scenario, write_trace

ROOT = Path(__file__).resolve().parent.parent
SCENARIO, SEED = ROOT / "scenarios" / "explore_tiny.json", 1
OUT = ROOT / "tests" / "golden" / "explore_tiny_seed1.jsonl"

if __name__ == "__main__":
    result = Simulation(load_scenario(SCENARIO), SEED).run()
    write_trace(result.records, OUT)
    print(f"wrote {OUT} ({len(result.records)} records)")
