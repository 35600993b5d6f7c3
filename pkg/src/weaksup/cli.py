"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver or EM
non-convergence.  Errors print one ``error: <category>: <message>`` line to
stderr.  Commands that produce predictions write them with ``--out-pred``;
diagnostic key/value reports go to stdout and, with ``--report``, to a file.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import io, metrics, ocds, synth
from .core import build_constraint_system, majority_vote, one_hot_labels
from .intervals import estimate_bounds
from .solver import (
    SolverError,
    SolverOptions,
    best_approximator,
    ds_advantage_threshold,
    solve,
)

_ENV_TOL = "WEAKSUP_TOL"


class UsageError(Exception):
    """Bad flags or flag combinations."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _resolve_tol(value: float | None, fallback: float = 1e-8) -> float:
    if value is not None:
        return value
    env = os.environ.get(_ENV_TOL)
    if env is not None:
        try:
            return float(env)
        except ValueError:
            raise UsageError(f"{_ENV_TOL} must be a number, got {env!r}") from None
    return fallback


def _prefix_list(text: str) -> list[int]:
    try:
        sizes = [int(f) for f in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("prefixes must be comma-separated integers")
    if not sizes or any(s < 1 for s in sizes):
        raise argparse.ArgumentTypeError("prefix sizes must be positive")
    return sizes


def _add_solver_flags(p: argparse.ArgumentParser, tol_help: str) -> None:
    p.add_argument("--tol", type=float, default=None, help=tol_help)
    p.add_argument("--max-iter", type=int, default=50_000, help="iteration budget (default 50000)")


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out-pred", metavar="PATH", help="write the prediction as n x k float rows")
    p.add_argument("--report", metavar="PATH", help="also write the report to this file")


def _emit(report: io.RunReport, path: str | None) -> None:
    sys.stdout.write(io.report_text(report))
    if path:
        io.write_report(path, report)


def _solver_entries(sol, tol: float, max_iter: int) -> list[tuple[str, object]]:
    return [
        ("solver.value", sol.value),
        ("solver.iterations", sol.iterations),
        ("solver.grad_norm", sol.grad_norm),
        ("solver.converged", sol.converged),
        ("solver.capped", sol.capped),
        ("config.tol", tol),
        ("config.max_iter", max_iter),
    ]


def _loss_entries(prefix: str, rep: metrics.LossReport) -> list[tuple[str, object]]:
    return [
        (f"{prefix}.log", rep.log_loss),
        (f"{prefix}.zero_one", rep.zero_one),
        (f"{prefix}.brier", rep.brier),
    ]


def _cmd_solve(args) -> int:
    if (args.bounds is None) == (args.labeled is None):
        raise UsageError("pass exactly one of --bounds or --labeled")
    votes = io.load_votes(args.preds, args.k)
    system = build_constraint_system(votes)
    if args.bounds is not None:
        bounds = io.load_bounds(args.bounds)
        source = f"file:{args.bounds}"
    else:
        sample = io.load_labeled_sample(args.labeled)
        bounds = estimate_bounds(votes, sample, args.conf)
        source = f"wilson:v={sample.v}:conf={args.conf:g}"
    if bounds.m != system.m:
        raise io.DataError(
            f"bounds carry {bounds.m} rows but the constraint system has {system.m}"
        )
    tol = _resolve_tol(args.tol)
    sol = solve(system, bounds, SolverOptions(tol=tol, max_iter=args.max_iter))
    if args.out_pred:
        io.write_labeling(args.out_pred, sol.prediction)
    entries = [
        ("method", "solve"),
        ("n", votes.n),
        ("p", system.p),
        ("k", votes.k),
        ("config.bounds_source", source),
    ] + _solver_entries(sol, tol, args.max_iter)
    _emit(io.RunReport(tuple(entries)), args.report)
    if not sol.converged:
        print("error: solver: did not converge; outputs reflect the last iterate", file=sys.stderr)
        return 3
    return 0


def _cmd_best_approx(args) -> int:
    votes = io.load_votes(args.preds, args.k)
    system = build_constraint_system(votes)
    labels = io.load_labels(args.labels, votes.k)
    if labels.shape[0] != votes.n:
        raise io.DataError(f"{args.labels}: {labels.shape[0]} labels for {votes.n} points")
    tol = _resolve_tol(args.tol)
    sol = best_approximator(system, labels, SolverOptions(tol=tol, max_iter=args.max_iter))
    if args.out_pred:
        io.write_labeling(args.out_pred, sol.prediction)
    entries = [
        ("method", "best-approx"),
        ("n", votes.n),
        ("p", system.p),
        ("k", votes.k),
        ("divergence_from_labels", metrics.kl_sum(labels, sol.prediction)),
    ] + _solver_entries(sol, tol, args.max_iter)
    _emit(io.RunReport(tuple(entries)), args.report)
    if not sol.converged:
        print("error: solver: did not converge; outputs reflect the last iterate", file=sys.stderr)
        return 3
    return 0


def _cmd_ds_em(args) -> int:
    votes = io.load_votes(args.preds, args.k)
    tol = _resolve_tol(args.tol)
    res = ocds.run_em(votes, tol=tol, max_iter=args.max_iter)
    if args.out_pred:
        io.write_labeling(args.out_pred, res.prediction)
    if args.params_out:
        io.write_coin_params(args.params_out, res.params)
    entries = [
        ("method", "ds-em"),
        ("n", votes.n),
        ("p", votes.p),
        ("k", votes.k),
        ("em.iterations", res.iterations),
        ("em.converged", res.converged),
        ("em.log_likelihood", res.log_likelihood[-1]),
        ("config.init", args.init),
        ("config.tol", tol),
        ("config.max_iter", args.max_iter),
    ]
    _emit(io.RunReport(tuple(entries)), args.report)
    if not res.converged:
        print("error: solver: EM did not converge within the iteration budget", file=sys.stderr)
        return 3
    return 0


def _cmd_mv(args) -> int:
    votes = io.load_votes(args.preds, args.k)
    pred = majority_vote(votes)
    if args.out_pred:
        io.write_labeling(args.out_pred, pred)
    else:
        sys.stdout.write(io.labeling_text(pred))
    return 0


def _cmd_eval(args) -> int:
    pred = io.load_prediction(args.pred)
    labels = io.load_labels(args.labels, pred.shape[1])
    if labels.shape[0] != pred.shape[0]:
        raise io.DataError(
            f"{args.labels}: {labels.shape[0]} labels for {pred.shape[0]} predictions"
        )
    rep = metrics.evaluate(pred, labels)
    kl = metrics.kl_sum(labels, pred)
    entries = (
        [("method", "eval"), ("n", rep.n), ("k", pred.shape[1])]
        + _loss_entries("loss", rep)
        + [("kl.raw", kl), ("kl.avg", kl / rep.n)]
    )
    _emit(io.RunReport(tuple(entries)), args.report)
    return 0


def _cmd_decompose(args) -> int:
    votes = io.load_votes(args.preds, args.k)
    system = build_constraint_system(votes)
    eta = io.load_labels(args.labels, votes.k)
    if eta.shape[0] != votes.n:
        raise io.DataError(f"{args.labels}: {eta.shape[0]} labels for {votes.n} points")
    g_bf = io.load_prediction(args.pred)
    if g_bf.shape != (votes.n, votes.k):
        raise io.DataError(f"{args.pred}: prediction shape does not match the votes")
    # downstream telescoping checks are tight, so the default tolerance is
    # stricter here than for a plain solve
    tol = _resolve_tol(args.tol, fallback=1e-10)
    sol = best_approximator(system, eta, SolverOptions(tol=tol, max_iter=args.max_iter))
    if not sol.converged:
        raise SolverError("best approximator did not converge; decomposition unavailable")
    g_star = sol.prediction

    bf = metrics.loss_decomposition(eta, g_bf, g_star)
    params_emp = ocds.m_step(votes, eta)
    g_plugin = ocds.e_step(votes, params_emp)
    if args.ds_params:
        params = io.load_coin_params(args.ds_params)
        ds_source = f"file:{args.ds_params}"
    else:
        em = ocds.run_em(votes, tol=tol, max_iter=1000)
        params = em.params
        ds_source = f"em:iterations={em.iterations}"
    g_ds = ocds.e_step(votes, params)
    em_split = metrics.em_loss_decomposition(eta, g_ds, g_plugin, g_star)
    acc = params.accuracy[votes.coverage > 0]
    interior = bool(
        np.all((acc > 0) & (acc < 1))
        and np.all((params.class_freq > 0) & (params.class_freq < 1))
    )
    gap_closed = metrics.em_estimation_gap(votes, eta, params) if interior else float("nan")
    threshold = ds_advantage_threshold(eta, g_ds, g_plugin, g_star, sol.weights)

    entries = [
        ("method", "decompose"),
        ("n", votes.n),
        ("k", votes.k),
        ("bf.total", bf.total),
        ("bf.model", bf.model),
        ("bf.approx", bf.approx),
        ("ds.total", em_split.total),
        ("ds.model", em_split.model),
        ("ds.approx_plugin", em_split.approx_plugin),
        ("ds.approx_est", em_split.approx_est),
        ("ds.approx_est_closed_form", gap_closed),
        ("ds.advantage_threshold", threshold),
        ("config.ds_source", ds_source),
    ] + _solver_entries(sol, tol, args.max_iter)
    _emit(io.RunReport(tuple(entries)), args.report)
    if args.fig_dir:
        from . import plots

        path = Path(args.fig_dir)
        path.mkdir(parents=True, exist_ok=True)
        plots.decomposition_figure(bf, em_split, path / "decomposition.png")
    return 0


def _cmd_estimate(args) -> int:
    votes = io.load_votes(args.preds, args.k)
    sample = io.load_labeled_sample(args.labeled)
    if sample.indices.max() >= votes.n:
        raise io.DataError(f"{args.labeled}: sample indices exceed the vote matrix")
    bounds = estimate_bounds(votes, sample, args.conf)
    if args.out:
        io.write_bounds(args.out, bounds)
    else:
        sys.stdout.write(io.bounds_text(bounds))
    return 0


def _cmd_synth(args) -> int:
    data = synth.generate(args.n, args.p, args.k, args.seed)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        io.write_votes(out / "preds.csv", data.votes)
        io.write_hard_labels(out / "labels.csv", data.labels)
        io.write_labeling(out / "eta.csv", data.eta)
        io.write_coin_params(out / "params.txt", data.params)
    entries: list[tuple[str, object]] = [
        ("method", "synth"),
        ("n", args.n),
        ("p", args.p),
        ("k", args.k),
        ("config.seed", args.seed),
    ]
    curve = None
    if args.prefixes:
        tol = _resolve_tol(args.tol)
        curve = synth.consistency_run(
            data, args.prefixes, SolverOptions(tol=tol, max_iter=args.max_iter)
        )
        entries.append(("config.tol", tol))
        for size, value in curve:
            entries.append((f"consistency.{size}", value))
    _emit(io.RunReport(tuple(entries)), args.report)
    if args.fig_dir and curve:
        from . import plots

        path = Path(args.fig_dir)
        path.mkdir(parents=True, exist_ok=True)
        plots.consistency_figure(curve, path / "consistency.png")
    return 0


def _cmd_demo_inconsistency(args) -> int:
    tol = _resolve_tol(args.tol, fallback=1e-11)
    report = synth.inconsistency_demo(SolverOptions(tol=tol, max_iter=args.max_iter))
    lines = [
        "method = demo-inconsistency",
        f"displacement = {report.displacement:.6f}",
        f"moved = {'true' if report.moved else 'false'}",
    ]
    for t, pattern in enumerate(report.patterns):
        lines.append(
            f"pattern ({pattern[0]},{pattern[1]}): count = {report.pattern_counts[t]}"
            f"  best_p1 = {report.best_table[t, 0]:.4f}"
            f"  em_p1 = {report.em_table[t, 0]:.4f}"
            f"  expected_n1 = {report.expected_counts[t, 0]:.2f}"
        )
    sys.stdout.write("\n".join(lines) + "\n")
    if args.report:
        entries = [
            ("method", "demo-inconsistency"),
            ("displacement", report.displacement),
            ("moved", report.moved),
        ]
        for t, pattern in enumerate(report.patterns):
            key = f"pattern.{pattern[0]}{pattern[1]}"
            entries.append((f"{key}.count", report.pattern_counts[t]))
            entries.append((f"{key}.best_p1", float(report.best_table[t, 0])))
            entries.append((f"{key}.em_p1", float(report.em_table[t, 0])))
        io.write_report(args.report, io.RunReport(tuple(entries)))
    if args.fig_dir:
        from . import plots

        path = Path(args.fig_dir)
        path.mkdir(parents=True, exist_ok=True)
        plots.pattern_figure(report, path / "patterns.png")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="weaksup",
        description="Aggregate weak rule votes into soft labels by solving an "
        "adversarial labeling game, with one-coin EM and evaluation tools.",
        epilog=f"The {_ENV_TOL} environment variable overrides the default --tol.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("solve", help="worst-case-optimal labeling under interval bounds")
    p.add_argument("--preds", required=True, help="vote matrix CSV (0 = abstain)")
    p.add_argument("--k", type=int, help="class count (default: max observed vote)")
    p.add_argument("--bounds", help="bounds file with 'b = ...' and 'eps = ...' lines")
    p.add_argument("--labeled", help="labeled sample CSV (index,label) for Wilson bounds")
    p.add_argument("--conf", type=float, default=0.95, help="Wilson confidence (default 0.95)")
    _add_solver_flags(p, f"projected-gradient tolerance (default 1e-8 or {_ENV_TOL})")
    _add_output_flags(p)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("best-approx", help="closest family member to a given labeling")
    p.add_argument("--preds", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--labels", required=True, help="hard (1 int column) or soft (k float columns)")
    _add_solver_flags(p, f"projected-gradient tolerance (default 1e-8 or {_ENV_TOL})")
    _add_output_flags(p)
    p.set_defaults(func=_cmd_best_approx)

    p = sub.add_parser("ds-em", help="one-coin EM from a majority-vote start")
    p.add_argument("--preds", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--init", choices=("mv",), default="mv", help="initialization (majority vote)")
    p.add_argument("--tol", type=float, default=None, help=f"EM tolerance (default 1e-8 or {_ENV_TOL})")
    p.add_argument("--max-iter", type=int, default=1000, help="EM iteration budget (default 1000)")
    p.add_argument("--params-out", metavar="PATH", help="write fitted parameters")
    _add_output_flags(p)
    p.set_defaults(func=_cmd_ds_em)

    p = sub.add_parser("mv", help="majority-vote baseline")
    p.add_argument("--preds", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--out-pred", metavar="PATH", help="output path (default: stdout)")
    p.set_defaults(func=_cmd_mv)

    p = sub.add_parser("eval", help="score a prediction file against labels")
    p.add_argument("--pred", required=True, help="n x k float rows")
    p.add_argument("--labels", required=True)
    p.add_argument("--report", metavar="PATH")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("decompose", help="split a prediction's loss into model and approximation parts")
    p.add_argument("--preds", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--labels", required=True)
    p.add_argument("--pred", required=True, help="prediction to decompose (n x k float rows)")
    p.add_argument("--ds-params", metavar="PATH", help="one-coin parameters (default: fit by EM)")
    p.add_argument("--fig-dir", metavar="DIR", help="also render a decomposition chart")
    _add_solver_flags(p, f"solver tolerance (default 1e-10 or {_ENV_TOL})")
    p.add_argument("--report", metavar="PATH")
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("estimate", help="Wilson interval bounds from a labeled sample")
    p.add_argument("--preds", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--labeled", required=True, help="labeled sample CSV (index,label)")
    p.add_argument("--conf", type=float, default=0.95)
    p.add_argument("--out", metavar="PATH", help="bounds file to write (default: stdout)")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("synth", help="generate one-coin data; optionally run the consistency sweep")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=int, default=3)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefixes", type=_prefix_list, help="comma-separated prefix sizes to sweep")
    p.add_argument("--out-dir", metavar="DIR", help="write preds/labels/eta/params files here")
    p.add_argument("--fig-dir", metavar="DIR", help="render the consistency curve")
    _add_solver_flags(p, f"solver tolerance for the sweep (default 1e-8 or {_ENV_TOL})")
    p.add_argument("--report", metavar="PATH")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("demo-inconsistency", help="show one EM round moving the best approximator")
    p.add_argument("--fig-dir", metavar="DIR", help="render per-pattern probability bars")
    _add_solver_flags(p, f"solver tolerance (default 1e-11 or {_ENV_TOL})")
    p.add_argument("--report", metavar="PATH")
    p.set_defaults(func=_cmd_demo_inconsistency)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 0
    except UsageError as exc:
        print(f"error: usage: {_one_line(exc)}", file=sys.stderr)
        return 1
    except io.DataError as exc:
        print(f"error: data: {_one_line(exc)}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: data: {_one_line(exc)}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"error: solver: {_one_line(exc)}", file=sys.stderr)
        return 3


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    raise SystemExit(main())
