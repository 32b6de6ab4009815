"""Command-line front end.

Subcommands: ``plan``, ``table``, ``estimate``, ``verify``.

Exit codes: 0 success / PASS, 2 usage or invalid parameters, 3 trial-source
failure, 4 verification FAIL.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import shlex
import sys
import warnings
from typing import Sequence

from . import bounds, engine, oracle
from .bounds import BoundVariant, ErrorSpec, InvalidSpecError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SOURCE = 3
EXIT_FAIL = 4

TABLE_ALPHAS = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _human(value) -> str:
    if isinstance(value, bool) or value is None:
        return str(value)
    if isinstance(value, int):
        return f"{value:,}"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _render_record(record: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(record)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(record.keys())
        writer.writerow(_csv_cell(v) for v in record.values())
        return buf.getvalue().rstrip("\n")
    width = max(len(k) for k in record)
    return "\n".join(f"{k:<{width}}  {_human(v)}" for k, v in record.items())


def _render_rows(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rows)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(rows[0].keys())
        for row in rows:
            writer.writerow(_csv_cell(v) for v in row.values())
        return buf.getvalue().rstrip("\n")
    cells = [[_human(v) for v in row.values()] for row in rows]
    headers = list(rows[0].keys())
    widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(headers, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, dict):
        return json.dumps(v)
    return "" if v is None else v


def _flatten(record: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in record.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[prefix + k] = v
    return out


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------


def _spec_from(args) -> ErrorSpec:
    missing = [f"--{n}" for n in ("alpha", "beta", "delta") if getattr(args, n) is None]
    if missing:
        raise UsageError("missing required flag(s): " + ", ".join(missing))
    return ErrorSpec(args.alpha, args.beta, args.delta)


def _plan_from(args) -> bounds.Plan:
    spec = _spec_from(args)
    if args.override_length is not None or args.override_width is not None:
        print(
            "WARNING: --override-length/--override-width replace the guaranteed box; "
            "coverage guarantees do not apply to this plan",
            file=sys.stderr,
        )
    return bounds.make_plan(
        spec, args.variant, length=args.override_length, width=args.override_width
    )


def _source_from(args) -> engine.TrialSource:
    has_synth = args.p_true is not None or args.seed is not None
    if has_synth and args.cmd is not None:
        raise UsageError("give either --p-true/--seed or --cmd, not both")
    if args.cmd is not None:
        argv = shlex.split(args.cmd)
        if not argv:
            raise UsageError("--cmd is empty")
        return engine.external_source(argv[0], argv[1:])
    if args.p_true is None or args.seed is None:
        raise UsageError("estimate needs a source: --p-true and --seed, or --cmd")
    if not 0 < args.p_true < 1:
        raise UsageError(f"--p-true must lie in (0, 1), got {args.p_true!r}")
    if not 0 <= args.seed <= engine.MASK64:
        raise UsageError(f"--seed must be a 64-bit unsigned integer, got {args.seed}")
    return engine.synthetic_source(args.p_true, args.seed)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_plan(args) -> int:
    plan = _plan_from(args)
    spec = plan.spec
    record = {
        "alpha": spec.alpha,
        "beta": spec.beta,
        "delta": spec.delta,
        "variant": plan.variant.value,
        "A": plan.a_bound,
        "B": plan.b_bound,
        "L": plan.length,
        "W": plan.width,
        "n_max": plan.n_max,
        "k_threshold": plan.k_threshold,
        "chernoff_hoeffding_n": bounds.chernoff_hoeffding_n(spec.alpha, spec.delta),
        "clt_approx_n": bounds.clt_approx_n(spec.alpha, spec.delta),
        "gain_ratio": bounds.gain_ratio(spec),
    }
    if plan.overridden:
        record["overridden"] = True
    print(_render_record(record, args.format))
    return EXIT_OK


def table_rows(delta: float) -> list[dict]:
    return [
        {"alpha": a, "n_ch": bounds.chernoff_hoeffding_n(a, delta)} for a in TABLE_ALPHAS
    ]


def cmd_table(args) -> int:
    if not 0 < args.delta < 1:
        raise UsageError(f"--delta must lie in (0, 1), got {args.delta!r}")
    rows = table_rows(args.delta)
    if args.format == "human":
        print(f"Chernoff-Hoeffding sample sizes (delta = {args.delta:g})")
        print(
            _render_rows([{"alpha": f"{r['alpha']:g}", "N_CH": r["n_ch"]} for r in rows], "human")
        )
    else:
        print(_render_rows(rows, args.format))
    return EXIT_OK


def cmd_estimate(args) -> int:
    rule = args.rule
    if rule == "tibs":
        plan = _plan_from(args)
    elif rule == "fixed":
        if args.n is None or args.n < 1:
            raise UsageError("--rule fixed needs --n >= 1")
    else:
        if args.beta is None or args.delta is None or args.cap is None:
            raise UsageError("--rule ibs needs --beta, --delta and --cap")
        if not args.beta > 0 or not 0 < args.delta < 1 or args.cap < 1:
            raise UsageError("--rule ibs needs beta > 0, 0 < delta < 1 and cap >= 1")
    try:
        source = _source_from(args)
    except engine.SourceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"trials_consumed: {exc.trials_consumed}", file=sys.stderr)
        return EXIT_SOURCE
    with source:
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", engine.TruncationWarning)
                if rule == "tibs":
                    result = engine.run_truncated_ibs(source, plan)
                elif rule == "fixed":
                    result = engine.run_fixed_size(source, args.n)
                else:
                    result = engine.run_inverse_binomial(source, args.beta, args.delta, args.cap)
        except engine.SourceError as exc:
            print(f"error: {exc}", file=sys.stderr)
            print(f"trials_consumed: {exc.trials_consumed}", file=sys.stderr)
            return EXIT_SOURCE
    for w in caught:
        print(f"WARNING: {w.message}", file=sys.stderr)
    record = result.as_dict()
    if args.format != "json":
        record = _flatten(record)
    print(_render_record(record, args.format))
    return EXIT_OK


def cmd_verify(args) -> int:
    plan = _plan_from(args)
    grid = oracle.default_grid() if args.grid is None else oracle.parse_grid(args.grid)
    empirical = args.mode == "empirical"
    if args.replications < 1:
        raise UsageError("--replications must be >= 1")
    try:
        reports = oracle.coverage_sweep(
            plan,
            grid,
            empirical=empirical,
            replications=args.replications,
            master_seed=args.master_seed,
        )
    except oracle.StateBudgetExceeded as exc:
        raise UsageError(str(exc)) from exc
    target = 1.0 - plan.spec.delta
    worst = oracle.min_coverage(reports)
    if empirical:
        # fail only on a statistically clear violation
        failed = [r for r in reports if r.ci_high <= target]
    else:
        failed = [r for r in reports if not r.coverage > target]
    verdict = "FAIL" if failed else "PASS"

    rows = []
    for r in reports:
        row = {"p_true": r.p_true, "coverage": r.coverage, "expected_m": r.expected_m}
        if empirical:
            row.update(ci_low=r.ci_low, ci_high=r.ci_high, m_std_error=r.m_std_error)
        rows.append(row)
    summary = {
        "verdict": verdict,
        "method": worst.method.value,
        "target": target,
        "min_coverage": worst.coverage,
        "argmin_p": worst.p_true,
        "violations": len(failed),
        "n_max": plan.n_max,
        "k_threshold": plan.k_threshold,
    }
    if args.format == "json":
        print(
            json.dumps(
                {
                    "plan": plan.as_dict(),
                    "criterion": worst.criterion.as_dict(),
                    "reports": [r.as_dict() for r in reports],
                    "summary": summary,
                }
            )
        )
    elif args.format == "csv":
        print(_render_rows(rows, "csv"))
        print(_render_record(summary, "csv"), file=sys.stderr)
    else:
        print(_render_rows(rows, "human"))
        print(
            f"{verdict}: min coverage {worst.coverage:.6f} at p={worst.p_true:g} "
            f"vs target {target:g} ({summary['method']}, {len(failed)} violation(s))"
        )
    return EXIT_OK if verdict == "PASS" else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentParser(add_help=False)
    fmt.add_argument("--format", choices=("human", "json", "csv"), default="human")

    spec = argparse.ArgumentParser(add_help=False)
    spec.add_argument("--alpha", type=float, help="margin of absolute error")
    spec.add_argument("--beta", type=float, help="margin of relative error")
    spec.add_argument("--delta", type=float, help="confidence parameter (coverage 1-delta)")
    spec.add_argument(
        "--variant", choices=[v.value for v in BoundVariant], default=BoundVariant.SIMPLIFIED.value
    )
    spec.add_argument("--override-length", type=float, help="replace L (negative testing only)")
    spec.add_argument("--override-width", type=float, help="replace W (negative testing only)")

    parser = argparse.ArgumentParser(
        prog="tibs",
        description="Monte Carlo probability estimation with truncated inverse binomial sampling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", parents=[spec, fmt], help="print the sampling budget")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("table", parents=[fmt], help="Chernoff-Hoeffding sample sizes")
    p.add_argument("--delta", type=float, default=1e-3)
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("estimate", parents=[spec, fmt], help="run one estimation")
    p.add_argument("--rule", choices=("tibs", "fixed", "ibs"), default="tibs")
    p.add_argument("--n", type=int, help="sample size for --rule fixed")
    p.add_argument("--cap", type=int, help="trial cap for --rule ibs")
    p.add_argument("--p-true", type=float, help="success probability of the synthetic source")
    p.add_argument("--seed", type=int, help="SplitMix64 seed of the synthetic source")
    p.add_argument("--cmd", help="external simulator command line (streams 0/1 lines)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("verify", parents=[spec, fmt], help="coverage sweep over a p grid")
    p.add_argument("--mode", choices=("exact", "empirical"), default="exact")
    p.add_argument("--grid", help="start:stop:step or comma list (default 0.01:0.99:0.01)")
    p.add_argument("--replications", type=int, default=10_000)
    p.add_argument("--master-seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, InvalidSpecError, ValueError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
