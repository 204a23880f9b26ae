"""Command-line entry point: ``pdcc {run,sweep,explore,check}``.

Exit codes: 0 all checks pass, 1 property violation, 2 configuration or
usage error, 3 budget exhausted.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from .checker import LIVENESS, SAFETY_PROPERTIES, Auditor, audit, report
from .errors import (
    ExplorerLimit,
    MalformedTrace,
    ScenarioError,
    StateSpaceBudgetExceeded,
)
from .simnet import Simulation, explore_interleavings, load_scenario, trace_lines, write_trace

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3


def _seed_range(text: str) -> range:
    """``A..B`` inclusive, or a single seed."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed range '{text}', expected A..B") from None
    if hi < lo:
        raise argparse.ArgumentTypeError(f"empty seed range '{text}'")
    return range(lo, hi + 1)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdcc", description="Simulate and check reconfigurable "
                                "certificate-based payments.")
    sub = p.add_subparsers(dest="command", required=True, metavar="{run,sweep,explore,check}")

    def common(sp):
        sp.add_argument("--scenario", required=True, help="scenario JSON file")
        sp.add_argument("--allow-assumption-violations", action="store_true",
                        help="load scenarios that break the fault bound or overlap assumption "
                             "(a liveness failure is then reported as expected-fail)")

    run = sub.add_parser("run", help="run one scenario with one seed")
    common(run)
    run.add_argument("--seed", type=int, default=0, help="RNG seed (default: 0)")
    run.add_argument("--max-steps", type=int, default=None,
                     help="step budget (default: the scenario's max_steps, else 100000)")
    run.add_argument("--trace-out", type=Path, default=None, help="write the JSON Lines trace here")
    run.add_argument("--check", choices=("online", "offline", "both"), default="both",
                     help="online: fail fast during the run; offline: audit the serialized trace; "
                          "both (default)")

    sw = sub.add_parser("sweep", help="run a scenario over a range of seeds")
    common(sw)
    sw.add_argument("--seeds", type=_seed_range, required=True, help="inclusive range A..B")
    sw.add_argument("--max-steps", type=int, default=None, help="step budget per seed")
    sw.add_argument("--witness-dir", type=Path, default=Path("witnesses"),
                    help="directory for traces and witnesses of failing seeds (default: witnesses)")

    ex = sub.add_parser("explore", help="bounded exploration of delivery orders")
    common(ex)
    ex.add_argument("--depth", type=int, default=None,
                    help="DFS depth bound (default: the scenario's explore.depth, else 12)")
    ex.add_argument("--max-states", type=int, default=None, help="state budget (default: 200000)")
    ex.add_argument("--walks", type=int, default=None, help="random walks after DFS (default: 200)")
    ex.add_argument("--seed", type=int, default=None, help="seed for the random walks (default: 0)")
    ex.add_argument("--witness-out", type=Path, default=None,
                    help="write the counterexample (action list and trace) here")

    ck = sub.add_parser("check", help="audit a recorded trace")
    ck.add_argument("--trace", type=Path, required=True, help="JSON Lines trace file")
    ck.add_argument("--report-out", type=Path, default=None, help="write the JSON verdict report here")
    return p


# ---------------------------------------------------------------------------
# helpers


def _print_verdicts(verdicts: dict) -> None:
    for prop, v in verdicts.items():
        line = f"verdict {prop} {v.status}"
        if v.detail:
            line += f" ({v.detail})"
        print(line)


def _summary(auditor: Auditor) -> str:
    epochs = max((f.get("epoch", 0) for n, f in auditor.finals.items()
                  if isinstance(n, int) and n not in auditor.corrupt), default=0)
    return (f"epochs installed {epochs} checkpoints committed {len(auditor.delivered)} "
            f"transfers executed {len(auditor.executed)}")


def _offline(records: list) -> Auditor:
    # audit the serialized form, independently of the in-memory objects
    return audit(json.loads(line) for line in trace_lines(records))


def _outcome(status: str, verdicts: dict) -> int:
    if any(not verdicts[p].ok for p in SAFETY_PROPERTIES if p in verdicts):
        return EXIT_VIOLATION
    if status == "budget-exhausted":
        return EXIT_BUDGET
    if not all(v.ok for v in verdicts.values()):
        return EXIT_VIOLATION
    return EXIT_OK


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario, args.allow_assumption_violations)
    online = Auditor() if args.check in ("online", "both") else None
    sim = Simulation(sc, args.seed, auditor=online)
    result = sim.run(args.max_steps)
    print(f"scenario {sc.name} seed {args.seed}")
    print(f"status {result.status} steps {result.steps} time {result.time}")
    if args.trace_out is not None:
        write_trace(result.records, args.trace_out)
        print(f"trace {args.trace_out}")
    offline = _offline(result.records) if args.check in ("offline", "both") else None
    auditor = offline or online
    verdicts = auditor.verdicts()
    if online is not None and offline is not None:
        mismatch = [p for p in verdicts if online.verdict(p).status != offline.verdict(p).status]
        if mismatch:
            print(f"online/offline disagreement on {', '.join(mismatch)}")
            verdicts = {p: (online.verdict(p) if not online.verdict(p).ok else v)
                        for p, v in verdicts.items()}
    print(_summary(auditor))
    _print_verdicts(verdicts)
    code = _outcome(result.status, verdicts)
    print("result " + ("pass" if code == EXIT_OK else "fail"))
    return code


def cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario, args.allow_assumption_violations)
    failures, exhausted = [], []
    for seed in args.seeds:
        auditor = Auditor()
        result = Simulation(sc, seed, keep_trace=False, auditor=auditor, annotate=False).run(args.max_steps)
        verdicts = auditor.verdicts()
        code = _outcome(result.status, verdicts)
        if code == EXIT_OK:
            continue
        bad = [p for p, v in verdicts.items() if not v.ok]
        # rerun with a trace for the witness; runs are deterministic
        full = Simulation(sc, seed).run(args.max_steps)
        args.witness_dir.mkdir(parents=True, exist_ok=True)
        stem = args.witness_dir / f"{sc.name}-seed{seed}"
        trace_path = stem.with_suffix(".trace.jsonl")
        write_trace(full.records, trace_path)
        witness = {"scenario": str(args.scenario), "seed": seed, "status": result.status,
                   "trace": str(trace_path),
                   "verdicts": {p: verdicts[p].to_json() for p in bad}}
        witness_path = stem.with_suffix(".witness.json")
        witness_path.write_text(json.dumps(witness, indent=2, sort_keys=True) + "\n")
        print(f"seed {seed} {result.status} failed {','.join(bad) or '-'} witness {witness_path}")
        (exhausted if code == EXIT_BUDGET else failures).append(seed)
    total = len(args.seeds)
    passed = total - len(failures) - len(exhausted)
    print(f"sweep {sc.name} seeds {args.seeds.start}..{args.seeds.stop - 1} "
          f"passed {passed}/{total}")
    if failures:
        return EXIT_VIOLATION
    return EXIT_BUDGET if exhausted else EXIT_OK


def cmd_explore(args) -> int:
    from .explore import replay

    sc = load_scenario(args.scenario, args.allow_assumption_violations)
    try:
        res = explore_interleavings(sc, args.depth, max_states=args.max_states, walks=args.walks, seed=args.seed)
    except StateSpaceBudgetExceeded as e:
        s = e.stats
        print(f"state budget exhausted: explored states={s['states']} transitions={s['transitions']} "
              f"dedup_hits={s['dedup_hits']} starts={s['start_points']}")
        return EXIT_BUDGET
    for line in res.summary_lines():
        print(line)
    if res.witness is None:
        return EXIT_OK
    for act in res.witness["actions"][-8:]:
        print("  " + " ".join(str(a) for a in act))
    if args.witness_out is not None:
        world = replay(sc, res.witness["actions"])
        data = dict(res.witness, trace=world.trace)
        args.witness_out.write_text(json.dumps(data, sort_keys=True) + "\n")
        print(f"witness {args.witness_out}")
    return EXIT_VIOLATION


def cmd_check(args) -> int:
    auditor = audit(args.trace)
    verdicts = auditor.verdicts()
    _print_verdicts(verdicts)
    rep = report(verdicts)
    if args.report_out is not None:
        args.report_out.write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    print("result " + ("pass" if rep["passed"] else "fail"))
    if not verdicts[LIVENESS].ok and all(verdicts[p].ok for p in SAFETY_PROPERTIES):
        return EXIT_BUDGET if auditor.finals else EXIT_VIOLATION
    return EXIT_OK if rep["passed"] else EXIT_VIOLATION


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "explore": cmd_explore, "check": cmd_check}


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, ExplorerLimit) as e:
        print(f"error: {e.reason}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except MalformedTrace as e:
        print(f"error: MalformedTrace: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
