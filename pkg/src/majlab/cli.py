"""Command-line entry point: ``majlab <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 failed oracle check, 3 I/O error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import math
import sys

from . import __version__
from . import adversary as adv
from . import driftlab
from .dynamics import Configuration, TieBreakRule, adoption_distribution, brute_force_adoption_distribution
from .harness import (
    AdversaryConfig,
    ExperimentSpec,
    InitialSpec,
    SweepResult,
    aggregate,
    fit_scaling,
    load_spec,
    read_rows,
    run_sweep,
    run_trial,
    sweep_columns,
    trial_row,
    with_outputs,
    write_csv,
)
from .observer import Thresholds, symmetry_break_threshold

EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_simulate(sub):
    p = sub.add_parser("simulate", help="run one grid cell")
    p.add_argument("--n", type=int, default=10_000, help="population (default 10000)")
    p.add_argument("--k", type=int, default=3, help="initial opinions (default 3)")
    p.add_argument("--initial", choices=["uniform", "biased"], default="uniform")
    p.add_argument("--gap", type=int, default=0, help="bias toward opinion 0 for --initial biased")
    p.add_argument("--counts", help="explicit initial supports, e.g. 5,3,2 (overrides --n/--k)")
    p.add_argument("--adversary", default="Null", help="Null, StaticPlant, DynamicSustain, ...")
    budget = p.add_mutually_exclusive_group()
    budget.add_argument("--F", type=int, help="adversary budget in nodes")
    budget.add_argument("--beta", type=float, help="use the dynamic bound with this beta")
    budget.add_argument("--static-bound", action="store_true", help="use the static bound")
    p.add_argument("--target", default="fresh", help="target opinion id or 'fresh' (default)")
    p.add_argument("--level", type=int, help="DynamicSustain top-up level (default F)")
    p.add_argument("--source", choices=["proportional", "largest"], help="StaticPlant node source")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-rounds", type=int, help="default: 50x the convergence bound shape")
    p.add_argument("--engine", choices=["multinomial", "node"], default="multinomial")
    p.add_argument("--tie-break", choices=["first", "uniform"], default="first")
    p.add_argument("--stop-at", choices=["strict", "almost"], help="default: strict unless dynamic adversary")
    p.add_argument("--gamma", type=float, default=1.0, help="small-opinion constant (default 1.0)")
    p.add_argument("--c-stop", type=float, default=3.0, help="almost-consensus slack (default 3.0)")
    p.add_argument("--trace", help="write the JSON-lines trace of trial 0 here")
    p.add_argument("--csv", help="write per-trial rows here")


def _add_drift(sub):
    p = sub.add_parser("drift", help="drift and hitting-time experiments")
    dsub = p.add_subparsers(dest="drift_cmd", required=True)
    w = dsub.add_parser("walk", help="biased walk vs the exact birth-death oracle")
    w.add_argument("--p-up", type=float, default=0.6)
    w.add_argument("--p-down", type=float, default=0.4)
    w.add_argument("--m", type=int, default=50)
    w.add_argument("--alpha", type=float, default=2.0)
    w.add_argument("--trials", type=int, default=10_000)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--csv", help="write (trial, tau, y_at_tau, exit_reason) rows")
    m = dsub.add_parser("majority", help="minimum-gap hitting time and overshoot from uniform")
    m.add_argument("--n", type=int, default=10**6)
    m.add_argument("--j", type=int, default=3)
    m.add_argument("--alpha", type=float, default=2.0)
    m.add_argument("--trials", type=int, default=1000)
    m.add_argument("--max-rounds", type=int, default=100_000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--csv")
    s = dsub.add_parser("step", help="one-step drift of the minimum-gap potential")
    s.add_argument("--n", type=int, default=10**6)
    s.add_argument("--j", type=int, default=3)
    s.add_argument("--trials", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="majlab", description="3-majority dynamics simulator and verification lab")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    _add_simulate(sub)
    p = sub.add_parser("sweep", help="run an experiment spec file (TOML)")
    p.add_argument("--spec", required=True)
    p.add_argument("--workers", type=int, help="override the spec's worker count")
    p.add_argument("--csv", help="override the CSV output path")
    p.add_argument("--json", help="override the JSON summary path")
    p = sub.add_parser("oracle-check", help="closed form vs brute-force enumeration")
    p.add_argument("--max-n", type=int, default=12)
    p.add_argument("--max-k", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-12)
    _add_drift(sub)
    p = sub.add_parser("fit", help="log-log least squares over a results CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--x", default="n")
    p.add_argument("--y", default="rounds")
    p.add_argument("--mean", action="store_true", help="average y per distinct x first")
    sub.add_parser("version")
    return parser


def _cmd_simulate(args) -> int:
    if args.counts:
        initial = InitialSpec("explicit", tuple(int(x) for x in args.counts.split(",")))
    else:
        initial = InitialSpec(args.initial, gap=args.gap)
    if args.beta is not None:
        budget = ("dynamic", args.beta)
    elif args.static_bound:
        budget = ("static",)
    else:
        budget = args.F or 0
    params = {}
    if args.level is not None:
        params["level"] = args.level
    if args.source:
        params["source"] = args.source
    target = "fresh" if args.target == "fresh" else int(args.target)
    spec = ExperimentSpec(
        name="simulate",
        n=(args.n,),
        k=(args.k,),
        initial=initial,
        adversary=AdversaryConfig(adv.AdversaryKind.parse(args.adversary), budget, target, params),
        trials=args.trials,
        max_rounds=args.max_rounds,
        thresholds=Thresholds(gamma=args.gamma, c_stop=args.c_stop),
        seed=args.seed,
        engine=args.engine,
        tie_break=TieBreakRule(args.tie_break),
        stop_at=args.stop_at,
        csv_path=args.csv,
    )
    (cell,) = spec.cells()
    results = []
    for t in range(args.trials):
        res = run_trial(cell, t, args.seed, record_trace=bool(args.trace) and t == 0)
        results.append(res)
        o = res.outcome
        print(
            f"trial={t} rounds={o.rounds} terminal={o.terminal.value} winner={o.winner} "
            f"valid={o.winner_valid} residual={o.residual} violations={len(o.violations)}"
        )
        if res.trace is not None:
            with open(args.trace, "w") as fh:
                for line in res.trace:
                    fh.write(json.dumps(line) + "\n")
    if args.csv:
        max_j = cell.initial.k + (0 if cell.adversary.is_null else 1)
        rows = [trial_row(cell, r, max_j) for r in results]
        write_csv(args.csv, SweepResult(rows, aggregate(rows), sweep_columns(max_j)), spec.name)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    spec = with_outputs(load_spec(args.spec), args.csv, args.json)
    result = run_sweep(spec, workers=args.workers)
    for agg in result.aggregates:
        print(
            f"cell={agg['cell_id']} n={agg['n']} k={agg['k']} F={agg['F']} "
            f"mean_rounds={agg['mean_rounds']:.2f} consensus={agg['consensus_rate']:.3f} "
            f"valid={agg['validity_rate']:.3f} violations={agg['violations']}"
        )
    return EXIT_OK


def oracle_check(max_n: int = 12, max_k: int = 4, tol: float = 1e-12) -> tuple[int, float]:
    """Compare closed form and enumeration on every composition of each
    ``n <= max_n`` into at most ``max_k`` positive parts."""
    checked, worst = 0, 0.0
    for n in range(1, max_n + 1):
        for k in range(1, min(max_k, n) + 1):
            for cuts in itertools.combinations(range(1, n), k - 1):
                bounds = (0, *cuts, n)
                c = Configuration.from_counts(b - a for a, b in zip(bounds, bounds[1:]))
                closed = adoption_distribution(c)
                for rule in TieBreakRule:
                    brute = brute_force_adoption_distribution(c, rule)
                    worst = max(worst, max(abs(closed[i] - brute[i]) for i in c.active))
                checked += 1
    return checked, worst


def _cmd_oracle(args) -> int:
    checked, worst = oracle_check(args.max_n, args.max_k, args.tol)
    ok = worst <= args.tol
    print(f"configurations={checked} max_abs_error={worst:.3e} tol={args.tol:g} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


def _cmd_drift(args) -> int:
    if args.drift_cmd == "walk":
        exact = driftlab.birth_death_exact_hitting(args.p_up, args.p_down, 0, args.m)
        spec = driftlab.HittingSpec(args.m, args.alpha, args.p_up - args.p_down if args.p_up > args.p_down else None)
        summ = driftlab.measure_hitting_time(
            driftlab.biased_walk(args.p_up, args.p_down), spec, args.trials, max_rounds=100 * math.ceil(exact) + 100,
            seed=args.seed,
        )
        z = (summ.mean_tau - exact) / summ.std_error if summ.std_error > 0 else 0.0
        print(
            f"exact={exact:.4f} mean_tau={summ.mean_tau:.4f} se={summ.std_error:.4f} z={z:.2f} "
            f"bound={summ.bound} bound_holds={summ.bound_holds} censored={summ.censored_fraction:.4f}"
        )
    elif args.drift_cmd == "majority":
        c0 = Configuration.uniform(args.n, args.j)
        gap = math.sqrt(args.j * args.n * math.log(args.n))
        spec = driftlab.HittingSpec(
            math.ceil(gap), args.alpha, potential=driftlab.min_gap_potential(c0.active, args.n)
        )
        summ = driftlab.measure_hitting_time(driftlab.majority_process(c0), spec, args.trials, args.max_rounds, args.seed)
        p, (lo, hi) = driftlab.overshoot_probability(summ.samples, args.alpha * gap)
        scale = 2 * args.j**2 * math.sqrt(math.log(args.n))
        print(
            f"m={spec.m} mean_tau={summ.mean_tau:.3f} se={summ.std_error:.3f} "
            f"ratio_to_2j2sqrtlog={summ.mean_tau / scale:.4f} censored={summ.censored_fraction:.4f} "
            f"overshoot_p={p:.4f} ci95=({lo:.4f},{hi:.4f})"
        )
    else:
        import numpy as np

        c0 = Configuration.uniform(args.n, args.j)
        est = driftlab.estimate_one_step_drift(c0, trials=args.trials, rng=np.random.default_rng(args.seed))
        print(
            f"mean_delta={est.mean_delta:.3f} se={est.std_error:.3f} "
            f"epsilon_hat={driftlab.epsilon_hat(est, args.n, args.j):.4f} "
            f"break_threshold={symmetry_break_threshold(args.n, args.j):.1f}"
        )
        return EXIT_OK
    if args.csv:
        driftlab.write_tau_csv(args.csv, summ.samples)
    return EXIT_OK


def _cmd_fit(args) -> int:
    rows = read_rows(args.csv)
    if args.mean:
        groups: dict[float, list[float]] = {}
        for r in rows:
            groups.setdefault(float(r[args.x]), []).append(float(r[args.y]))
        rows = [{args.x: x, args.y: sum(v) / len(v)} for x, v in sorted(groups.items())]
    fit = fit_scaling(rows, args.x, args.y)
    print(f"slope={fit.slope:.6f} intercept={fit.intercept:.6f} r2={fit.r2:.6f}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    handlers = {
        "simulate": _cmd_simulate,
        "sweep": _cmd_sweep,
        "oracle-check": _cmd_oracle,
        "drift": _cmd_drift,
        "fit": _cmd_fit,
    }
    if args.cmd == "version":
        print(__version__)
        return EXIT_OK
    try:
        return handlers[args.cmd](args)
    except OSError as exc:
        print(f"majlab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"majlab: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
