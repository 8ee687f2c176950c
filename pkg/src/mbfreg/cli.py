"""Command line entry point.

    mbfreg run scenarios/k1.scn --seed 3
    mbfreg sweep scenarios/k2.scn --seeds 0..99 --jobs 4
    mbfreg check out/k1-seed3.trace

Traces go to ``--trace`` when given, otherwise into ``$MBFREG_OUT`` (default
``./mbfreg-out``).  Exit status is 0 for a clean verdict, 1 when the checker
found violations and 2 for an unusable scenario or trace.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .checker import HistoryError, TraceError, check_trace
from .scenario import Scenario, ScenarioError
from .sim import simulate

OUT_ENV = "MBFREG_OUT"
EXIT_OK, EXIT_VIOLATIONS, EXIT_INVALID = 0, 1, 2

BOUNDS_BANNER = (
    "!!! enforce_bounds=false: replica/period bounds are NOT checked; "
    "violations in this run are expected and prove nothing about the protocol !!!"
)


def out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "mbfreg-out"))


def parse_seeds(text: str) -> range:
    lo, sep, hi = text.partition("..")
    try:
        a = int(lo)
        b = int(hi) if sep else a
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None
    if b < a:
        raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
    return range(a, b + 1)


def load_scenario(path: str) -> Scenario:
    sc = Scenario.load(path)
    sc.validate()
    return sc


def _warn_bounds(sc: Scenario) -> None:
    if not sc.enforce_bounds:
        print(BOUNDS_BANNER, file=sys.stderr)


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    _warn_bounds(sc)
    seed = sc.seed if args.seed is None else args.seed
    result = simulate(sc, seed=seed, maintenance=False if args.no_maintenance else None)
    text = result.text()
    path = Path(args.trace) if args.trace else out_dir() / f"{Path(args.scenario).stem}-seed{seed}.trace"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    print(f"trace={path}")
    if args.no_check:
        return EXIT_OK
    verdict = check_trace(text)
    sys.stdout.write(verdict.report())
    return EXIT_OK if verdict.ok else EXIT_VIOLATIONS


def _sweep_one(job: tuple) -> tuple:
    text, seed, maintenance = job
    sc = Scenario.loads(text)
    trace = simulate(sc, seed=seed, maintenance=maintenance).text()
    verdict = check_trace(trace)
    est = verdict.estimate
    lag = None if est.tau_no_tr is None else max(0, est.empirical - est.tau_no_tr)
    return seed, len(verdict.errors), lag, None if verdict.ok else trace


def sweep(scenario: Scenario, seeds: Sequence[int], jobs: int = 1, maintenance: Optional[bool] = None,
          keep_dir: Optional[Path] = None, stem: str = "sweep") -> tuple[int, list[int], list]:
    """Run ``seeds`` and return (total violations, failing seeds, per-seed lags).

    Output does not depend on ``jobs``: results are collected in seed order.
    """
    work = [(scenario.dumps(), s, maintenance) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, work))
    else:
        results = [_sweep_one(w) for w in work]
    total, failing, lags = 0, [], []
    for seed, count, lag, trace in results:
        total += count
        lags.append(lag)
        if count:
            failing.append(seed)
            if keep_dir is not None:
                keep_dir.mkdir(parents=True, exist_ok=True)
                (keep_dir / f"{stem}-seed{seed}.trace").write_text(trace, encoding="utf-8")
    return total, failing, lags


def cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario)
    _warn_bounds(sc)
    stem = Path(args.scenario).stem
    total, failing, lags = sweep(sc, args.seeds, args.jobs, False if args.no_maintenance else None,
                                 out_dir(), stem)
    measured = [x for x in lags if x is not None]
    if measured:
        print(f"max_stabilization_lag={max(measured)}")
    for seed in failing:
        print(f"failing_seed={seed} trace={out_dir() / f'{stem}-seed{seed}.trace'}")
    print(f"violations={total} runs={len(args.seeds)}")
    return EXIT_VIOLATIONS if failing else EXIT_OK


def cmd_check(args) -> int:
    verdict = check_trace(Path(args.trace).read_text(encoding="utf-8"))
    sys.stdout.write(verdict.report())
    return EXIT_OK if verdict.ok else EXIT_VIOLATIONS


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mbfreg", description="Simulate and check the mobile Byzantine regular register.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one seed and check the trace")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int)
    run.add_argument("--trace", help="where to write the trace")
    run.add_argument("--no-check", action="store_true")
    run.add_argument("--no-maintenance", action="store_true", help="never schedule maintenance")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="simulate and check a range of seeds")
    sw.add_argument("scenario")
    sw.add_argument("--seeds", type=parse_seeds, required=True, metavar="A..B")
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--no-maintenance", action="store_true")
    sw.set_defaults(func=cmd_sweep)

    ck = sub.add_parser("check", help="check an existing trace")
    ck.add_argument("trace")
    ck.set_defaults(func=cmd_check)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TraceError, HistoryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
