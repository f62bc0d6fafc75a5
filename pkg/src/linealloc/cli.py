"""Command-line front end.

Exit codes: 0 success, 2 model error (unstable load, clustered roots,
numerical failure), 3 bad input (flags, files, infeasible instance).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import analytic, simulate
from .distributions import Exponential, distribution_from_dict, parse_distribution
from .errors import InfeasibleInstanceError, NumericalError, RootMultiplicityError, UnstableModelError
from .policies import POLICIES, read_instance_csv, write_assignment_csv

EXIT_OK = 0
EXIT_MODEL = 2
EXIT_INPUT = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _dist(text):
    try:
        return parse_distribution(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_common(p):
    p.add_argument("--config", type=Path, help="JSON file with default values for these flags")


def _add_sim_flags(p):
    p.add_argument("--users", type=int, default=100_000, help="measured users per trial")
    p.add_argument("--user", type=_dist, default=Exponential(0.5), help="user gap law (default exp:0.5)")
    p.add_argument("--server", type=_dist, default=Exponential(1.0), help="server gap law (default exp:1)")
    p.add_argument("--c", type=int, default=1, help="fixed server capacity")
    p.add_argument("--pmf", type=_floats, help="capacity pmf over 1..len, overrides --c")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=simulate.DEFAULT_SEED)
    p.add_argument("--policies", default="mtr", help="comma list of mtr,ugs,gs,optimal")
    p.add_argument("--warmup", type=int, help="unmeasured leading users (default users/5)")
    p.add_argument("--jobs", type=int, default=1, help="concurrent trials")
    p.add_argument("--out", type=Path, help="CSV output path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="linealloc", description="Capacitated allocation on a line: analytics and simulation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pa = sub.add_parser("analytic", help="closed-form expected request distance")
    pa.add_argument("model", choices=["bulk", "grps", "prgs", "hetcap", "heavy", "limit"])
    pa.add_argument("--lambda", dest="lam", type=float, help="Poisson user rate")
    pa.add_argument("--mu", type=float, help="Poisson server rate")
    pa.add_argument("--c", type=int, default=1, help="server capacity")
    pa.add_argument("--pmf", type=_floats, help="capacity pmf over 1..len (hetcap)")
    pa.add_argument("--user", type=_dist, help="user gap law, e.g. det:2")
    pa.add_argument("--server", type=_dist, help="server gap law, e.g. h2:4:1")
    pa.add_argument("--side", choices=["grps", "prgs"], help="which limit (limit model)")
    pa.add_argument("--csv", type=Path, help="also append a CSV row to this file")
    _add_common(pa)

    ps = sub.add_parser("simulate", help="Monte Carlo estimate of mean request distance")
    _add_sim_flags(ps)
    _add_common(ps)

    pc = sub.add_parser("compare", help="simulation next to the matching analytic model")
    _add_sim_flags(pc)
    pc.add_argument("--analytic", choices=["auto", "heavy"], default="auto")
    _add_common(pc)

    pf = sub.add_parser("figure", help="reproduce a figure's sweeps as CSV files")
    pf.add_argument("fig", type=int, choices=sorted(simulate.FIGURES))
    pf.add_argument("--part", choices=["a", "b"])
    pf.add_argument("--scale", type=float, default=1.0, help="fraction of 1e5 users per trial")
    pf.add_argument("--trials", type=int, default=50)
    pf.add_argument("--seed", type=int, default=simulate.DEFAULT_SEED)
    pf.add_argument("--jobs", type=int, default=1)
    pf.add_argument("--outdir", type=Path, default=Path("."))
    _add_common(pf)

    pm = sub.add_parser("match", help="assign users of an instance CSV")
    pm.add_argument("instance", type=Path, help="CSV with role,position,capacity")
    pm.add_argument("--policy", choices=sorted(POLICIES), default="optimal")
    pm.add_argument("--out", type=Path, help="assignment CSV path (default stdout)")
    _add_common(pm)
    return parser


def _parse(parser: argparse.ArgumentParser, argv):
    args = parser.parse_args(argv)
    cfg_path = getattr(args, "config", None)
    if cfg_path is None:
        return args
    try:
        values = json.loads(cfg_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.exit(EXIT_INPUT, f"linealloc: cannot read config {cfg_path}: {exc}\n")
    if not isinstance(values, dict):
        parser.exit(EXIT_INPUT, f"linealloc: config {cfg_path} must hold a JSON object\n")
    # values from the file become defaults; explicit flags still win
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in subparser._actions}
    converted = {}
    for key, val in values.items():
        dest = "lam" if key == "lambda" else key
        if dest not in known:
            parser.exit(EXIT_INPUT, f"linealloc: unknown config key {key!r}\n")
        conv = known[dest].type
        if isinstance(val, dict) and conv is _dist:
            val = distribution_from_dict(val)
        elif conv is not None and isinstance(val, (str, int, float)) and conv not in (int, float):
            val = conv(str(val))
        elif isinstance(val, list):
            val = tuple(val)
        converted[dest] = val
    subparser.set_defaults(**converted)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# commands


def _need(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        flags = ", ".join("--lambda" if n == "lam" else f"--{n}" for n in missing)
        raise ValueError(f"{args.model} needs {flags}")


def cmd_analytic(args, out=None) -> int:
    out = out or sys.stdout
    m = args.model
    if m == "bulk":
        _need(args, "lam", "mu")
        res = analytic.bulk_mm1_solve(analytic.BulkMM1Model(args.lam, args.mu, args.c))
    elif m == "grps":
        _need(args, "user", "mu")
        res = analytic.grps_solve(analytic.GrpsModel(args.user, args.mu, args.c))
    elif m == "prgs":
        _need(args, "lam", "server")
        res = analytic.prgs_solve(analytic.PrgsModel(args.lam, args.server, args.c)).result()
    elif m == "hetcap":
        _need(args, "lam", "server")
        model = (
            analytic.HetCapModel(args.lam, args.server, args.pmf)
            if args.pmf
            else analytic.HetCapModel.fixed(args.lam, args.server, args.c)
        )
        res = analytic.hetcap_solve(model).result()
    elif m == "heavy":
        user = args.user or (Exponential(args.lam) if args.lam else None)
        server = args.server or (Exponential(args.mu) if args.mu else None)
        if user is None or server is None:
            raise ValueError("heavy needs --user/--lambda and --server/--mu")
        ed = analytic.heavy_traffic_estimate(user, server)
        res = analytic.AnalyticResult("heavy", {"inter_user": user, "inter_server": server}, ed)
    else:
        if args.side is None:
            raise ValueError("limit needs --side grps|prgs")
        if args.side == "grps":
            _need(args, "mu")
            ed = analytic.uncapacitated_expected_distance("grps", None, args.mu)
            res = analytic.AnalyticResult("limit", {"side": "grps", "mu": args.mu}, ed)
        else:
            _need(args, "server")
            ed = analytic.uncapacitated_expected_distance("prgs", args.server)
            res = analytic.AnalyticResult("limit", {"side": "prgs", "inter_server": args.server}, ed)
    print(f"{res.expected_distance!r}", file=out)
    print(res.to_json(indent=2), file=out)
    if args.csv:
        new = not args.csv.exists() or args.csv.stat().st_size == 0
        with open(args.csv, "a", newline="") as fh:
            if new:
                analytic.write_results_csv(fh, [res])
            else:
                import csv

                csv.DictWriter(fh, fieldnames=analytic.CSV_FIELDS).writerow(res.csv_row())
    return EXIT_OK


def _sim_config(args) -> simulate.SimConfig:
    pols = tuple(p.strip() for p in args.policies.split(",") if p.strip())
    return simulate.SimConfig(
        n_users=args.users,
        inter_user=args.user,
        inter_server=args.server,
        capacity=args.c if not args.pmf else len(args.pmf),
        capacity_pmf=args.pmf,
        trials=args.trials,
        seed=args.seed,
        policies=pols,
        warmup=args.warmup,
    )


def _header(cfg: simulate.SimConfig, **extra) -> dict:
    h = {"seed": cfg.seed, "config": json.dumps(cfg.to_dict(), sort_keys=True)}
    h.update(extra)
    return h


def _emit(rows, header, path, out):
    if path:
        with open(path, "w", newline="") as fh:
            simulate.write_sweep_csv(fh, rows, header)
    else:
        simulate.write_sweep_csv(out, rows, header)


def _rows(res: simulate.SimResult, av: float) -> list[dict]:
    rows = []
    for p in res.config.policies:
        m = res.mean(p)
        a = av if p in ("mtr", "ugs") else math.nan
        rows.append(
            {
                "axis_value": "",
                "policy": p,
                "mean_distance": m,
                "stderr": res.stderr(p),
                "variance": res.variance(p),
                "matched_fraction": res.matched_fraction,
                "analytic_value": a,
                "ratio": a / m if m > 0 else math.nan,
            }
        )
    return rows


def cmd_simulate(args, out=None) -> int:
    out = out or sys.stdout
    cfg = _sim_config(args)
    res = simulate.run(cfg, jobs=args.jobs)
    _emit(_rows(res, math.nan), _header(cfg), args.out, out)
    return EXIT_OK


def cmd_compare(args, out=None) -> int:
    out = out or sys.stdout
    cfg = _sim_config(args)
    res = simulate.run(cfg, jobs=args.jobs)
    av = simulate.analytic_value(cfg, args.analytic)
    _emit(_rows(res, av), _header(cfg, analytic=args.analytic), args.out, out)
    se = res.stderr("mtr")
    if math.isfinite(av) and se > 0:
        z = (res.mean("mtr") - av) / se
        print(f"# mtr {res.mean('mtr'):.6g} +- {se:.3g} vs analytic {av:.6g} (z={z:+.2f})", file=sys.stderr)
    return EXIT_OK


def cmd_figure(args, out=None) -> int:
    out = out or sys.stdout
    specs = simulate.figure_sweeps(args.fig, scale=args.scale, seed=args.seed, part=args.part, trials=args.trials)
    args.outdir.mkdir(parents=True, exist_ok=True)
    for spec in specs:
        rows = simulate.sweep(
            spec.template,
            spec.axis,
            spec.values,
            analytic_kind=spec.analytic_kind,
            jobs=args.jobs,
            configure=spec.configure,
        )
        path = args.outdir / f"{spec.name}.csv"
        header = _header(spec.template, figure=args.fig, sweep=spec.name, axis=spec.axis, scale=args.scale)
        with open(path, "w", newline="") as fh:
            simulate.write_sweep_csv(fh, rows, header)
        print(path, file=out)
    return EXIT_OK


def cmd_match(args, out=None) -> int:
    out = out or sys.stdout
    inst = read_instance_csv(args.instance)
    a = POLICIES[args.policy](inst)
    summary = f"# policy={args.policy} total_cost={a.total_cost!r} mean={a.mean_distance!r} matched={a.n_matched}/{inst.n_users}"
    if args.out:
        write_assignment_csv(args.out, inst, a)
        print(summary, file=out)
    else:
        write_assignment_csv(out, inst, a)
        print(summary, file=out)
    return EXIT_OK


COMMANDS = {
    "analytic": cmd_analytic,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "figure": cmd_figure,
    "match": cmd_match,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = _parse(parser, argv)
    try:
        return COMMANDS[args.command](args)
    except (UnstableModelError, RootMultiplicityError, NumericalError) as exc:
        print(f"linealloc: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (ValueError, InfeasibleInstanceError, OSError) as exc:
        print(f"linealloc: bad input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
