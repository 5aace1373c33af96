"""Command-line entry point.

    lotion-lab run --spec spec.json [--workers N] [--out DIR]
    lotion-lab summarize DIR
    lotion-lab report DIR
    lotion-lab verify [pytest args...]

Exit codes: 0 success, 1 configuration error, 2 at least one run diverged,
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .harness import SpecError, format_summary, parse_spec, read_results, run_sweep, summarize


def _cmd_run(args) -> int:
    try:
        spec = parse_spec(args.spec)
    except SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 1
    out_dir = args.out if args.out is not None else (spec.out or "results")
    results_path = run_sweep(spec, workers=args.workers, out_dir=out_dir)
    summary = summarize(results_path)
    print(format_summary(summary))
    print(f"\nresults: {results_path}")
    if summary["diverged_arms"] > 0:
        print(f"warning: {summary['diverged_arms']} arm(s) diverged", file=sys.stderr)
        return 2
    return 0


def _cmd_summarize(args) -> int:
    try:
        summary = summarize(args.results)
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    print(format_summary(summary))
    if args.json:
        print(json.dumps(summary, indent=2))
    return 0


def _cmd_report(args) -> int:
    from .report import render_report

    try:
        read_results(Path(args.results) / "results.csv" if Path(args.results).is_dir() else args.results)
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    written = render_report(args.results)
    for path in written:
        print(f"wrote {path}")
    if not written:
        print("no figures produced (empty results?)", file=sys.stderr)
    return 0


def _cmd_verify(args) -> int:
    import pytest

    tests_dir = _find_tests_dir()
    if tests_dir is None:
        print("could not locate the tests/ directory; run from the repository root", file=sys.stderr)
        return 3
    argv = [str(tests_dir), "-v"] + list(args.pytest_args)
    print(f"running verification suite: pytest {' '.join(argv)}")
    code = pytest.main(argv)
    return 0 if code == 0 else 3


def _find_tests_dir() -> Path | None:
    candidates = [
        Path.cwd() / "tests",
        Path(__file__).resolve().parent.parent.parent / "tests",
    ]
    for cand in candidates:
        if (cand / "test_acceptance.py").exists():
            return cand
    return None


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lotion-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lotion-lab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a sweep spec")
    p_run.add_argument("--spec", required=True, help="path to the experiment spec (JSON)")
    p_run.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p_run.add_argument("--out", default=None, help="output directory (overrides spec)")
    p_run.set_defaults(func=_cmd_run)

    p_sum = sub.add_parser("summarize", help="print best final losses from a results directory")
    p_sum.add_argument("results", help="results directory or results.csv path")
    p_sum.add_argument("--json", action="store_true", help="also print the summary as JSON")
    p_sum.set_defaults(func=_cmd_summarize)

    p_rep = sub.add_parser("report", help="render figures next to the results CSV")
    p_rep.add_argument("results", help="results directory or results.csv path")
    p_rep.set_defaults(func=_cmd_report)

    p_ver = sub.add_parser("verify", help="run the property and acceptance test suite")
    p_ver.add_argument("pytest_args", nargs="*", help="extra arguments forwarded to pytest")
    p_ver.set_defaults(func=_cmd_verify)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
