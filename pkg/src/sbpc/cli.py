"""Command-line front end.

Subcommands: ``solve``, ``route-cost``, ``route-cost-corr``, ``simulate`` and
``bayes-check``.  Solver reports are JSON; simulation tables are CSV.
The ``SBPC_LOG`` environment variable sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .bayes import BayesError
from .instance import DEFAULT_EPS, InstanceError, load_instance
from .restocking import RouteError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INSTANCE = 3
EXIT_INFEASIBLE = 4
EXIT_NO_INCUMBENT = 5

SCHEMA_PATH = Path(__file__).with_name("schemas") / "report.schema.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _factor(s: str) -> float:
    v = float(s)
    if not (v >= 1.0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"load factor must be >= 1, got {s}")
    return v


def _eps(s: str) -> float:
    v = float(s)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"eps must lie in (0, 1), got {s}")
    return v


def _positive(s: str) -> float:
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {s}")
    return v


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _route(s: str) -> list[int]:
    try:
        r = [int(t) for t in s.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"route must be comma-separated customer indices, got {s!r}")
    if not r:
        raise argparse.ArgumentTypeError("route is empty")
    return r


def _int_list(s: str) -> list[int]:
    out = []
    for part in s.split(","):
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def _float_list(s: str) -> list[float]:
    return [_factor(t) for t in s.split(",") if t]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sbpc", description="Exact VRPSD solver under optimal restocking and correlated-demand study.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, instance=True):
        if instance:
            sp.add_argument("--instance", required=True, help="CVRPLIB/TSPLIB instance file")
            sp.add_argument("--f", type=_factor, default=1.0, help="load factor (default 1.0)")
            sp.add_argument("--fleet", choices=("fixed", "unlimited"), default="unlimited")
        sp.add_argument("--eps", type=_eps, default=DEFAULT_EPS, help="probability truncation threshold")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=_positive_int, default=os.cpu_count() or 1)
        sp.add_argument("--out", help="write the report here instead of stdout")
        sp.add_argument("--format", choices=("json", "csv"), default=None)

    s = sub.add_parser("solve", help="solve an instance to optimality")
    common(s)
    s.add_argument("--time-limit", type=_positive, default=600 * 60.0, help="seconds (default 36000)")
    s.add_argument("--kp-bound", action="store_true", help="enable knapsack completion bounds")
    s.add_argument("--rcsp-m", type=int, default=8, help="size of the elementary set M in RCSP bounds")
    s.add_argument("--no-rcsp", action="store_true", help="disable RCSP completion bounds")

    r = sub.add_parser("route-cost", help="expected cost of a route under optimal restocking")
    common(r)
    r.add_argument("--route", type=_route, required=True, help="comma-separated customers, e.g. 3,1,2")

    rc = sub.add_parser("route-cost-corr", help="route cost with Bayesian learning of a common demand factor")
    common(rc)
    rc.add_argument("--route", type=_route, required=True)
    rc.add_argument("--k0", type=_positive, default=12.0, help="prior shape")
    rc.add_argument("--s0", type=_positive, default=1.0 / 12.0, help="prior scale")

    sm = sub.add_parser("simulate", help="OR-I vs OR-C savings table")
    common(sm, instance=False)
    sm.add_argument("--n", type=_int_list, default=list(range(3, 16)), help="route sizes, e.g. 5 or 3-15")
    sm.add_argument("--f", type=_float_list, default=[1.3, 1.6, 1.9, 2.5], help="load factors, e.g. 1.6 or 1.3,1.9")
    sm.add_argument("--routes", type=_positive_int, default=20)
    sm.add_argument("--scenarios", type=_positive_int, default=5000)
    sm.add_argument("--k0", type=_positive, default=12.0)
    sm.add_argument("--s0", type=_positive, default=1.0 / 12.0)

    b = sub.add_parser("bayes-check", help="posterior convergence of the demand factor")
    common(b, instance=False)
    b.add_argument("--k0", type=_positive, default=12.0)
    b.add_argument("--s0", type=_positive, default=1.0 / 12.0)
    b.add_argument("--chi", type=_positive, default=1.0, help="true factor")
    b.add_argument("--mu", type=_positive, default=50.0, help="rate of every customer")
    b.add_argument("--steps", type=_positive_int, default=500)
    b.add_argument("--trials", type=_positive_int, default=1000)
    return p


def _load(args):
    return load_instance(args.instance, f=args.f, fleet_mode=args.fleet, eps=args.eps)


def _cmd_solve(args) -> tuple[dict, int]:
    from .bnb import SolverConfig, solve

    inst = _load(args)
    cfg = SolverConfig(
        time_limit=args.time_limit,
        use_knapsack=args.kp_bound,
        use_rcsp=not args.no_rcsp,
        rcsp_m=args.rcsp_m,
        workers=args.workers,
    )
    res = solve(inst, cfg)
    inc = res.incumbent
    report = {
        "command": "solve",
        "instance": inst.name,
        "f": inst.load_factor,
        "fleet": args.fleet,
        "eps": args.eps,
        "status": res.status,
        "objective": inc.objective if inc.feasible else None,
        "routes": [list(r) for r in inc.routes],
        "paths": len(inc.routes),
        "lb": res.lower_bound if math.isfinite(res.lower_bound) else None,
        "gap": res.gap if math.isfinite(res.gap) else None,
        "runtime": res.runtime,
        "rccs": res.stats["rccs"],
        "srcs": res.stats["srcs"],
        "nodes": res.stats["nodes"],
    }
    if res.status == "infeasible":
        code = EXIT_INFEASIBLE
    elif not inc.feasible:
        code = EXIT_NO_INCUMBENT
    else:
        code = EXIT_OK
    return report, code


def _cmd_route_cost(args) -> tuple[dict, int]:
    from .restocking import route_cost_or

    inst = _load(args)
    return {"command": "route-cost", "instance": inst.name, "route": args.route, "cost": route_cost_or(inst, args.route)}, 0


def _cmd_route_cost_corr(args) -> tuple[dict, int]:
    from .bayes import ExternalFactorPrior, route_cost_or_c
    from .restocking import route_cost_or

    inst = _load(args)
    prior = ExternalFactorPrior(args.k0, args.s0)
    pol = route_cost_or_c(inst, args.route, prior, eps=args.eps)
    return {
        "command": "route-cost-corr",
        "instance": inst.name,
        "route": args.route,
        "k0": args.k0,
        "s0": args.s0,
        "cost": pol.expected_cost,
        "cost_independent": route_cost_or(inst, args.route),
    }, 0


def _cmd_simulate(args) -> tuple[object, int]:
    from .bayes import ExternalFactorPrior
    from .sim import savings_table, table_csv

    for n in args.n:
        if not 3 <= n <= 15:
            raise _UsageError(f"route sizes must lie in [3, 15], got {n}")
    rows = savings_table(
        args.n, args.f, args.routes, args.scenarios, args.seed, ExternalFactorPrior(args.k0, args.s0), args.eps
    )
    if (args.format or "csv") == "csv":
        return table_csv(rows, args.f), 0
    return {
        "command": "simulate",
        "seed": args.seed,
        "routes": args.routes,
        "scenarios": args.scenarios,
        "rows": [
            {"n": row["n"], "cells": [{"f": f, "avg_pct": row[f][0], "max_pct": row[f][1]} for f in args.f]}
            for row in rows
        ],
    }, 0


def _cmd_bayes_check(args) -> tuple[dict, int]:
    from .bayes import ExternalFactorPrior, convergence_stats

    prior = ExternalFactorPrior(args.k0, args.s0)
    st = convergence_stats(prior, args.chi, np.full(args.steps, args.mu), max(args.trials, 100), args.seed)
    checkpoints = sorted({0, 9, 99, args.steps - 1, args.steps} & set(range(args.steps + 1)))
    return {
        "command": "bayes-check",
        "k0": args.k0,
        "s0": args.s0,
        "chi": args.chi,
        "mu": args.mu,
        "trials": max(args.trials, 100),
        "seed": args.seed,
        "checkpoints": [
            {
                "observations": int(t),
                "mse": float(st["mse"][t]),
                "closed_form_variance": float(st["closed_form_variance"][t]),
            }
            for t in checkpoints
        ],
    }, 0


class _UsageError(Exception):
    pass


COMMANDS = {
    "solve": _cmd_solve,
    "route-cost": _cmd_route_cost,
    "route-cost-corr": _cmd_route_cost_corr,
    "simulate": _cmd_simulate,
    "bayes-check": _cmd_bayes_check,
}


def _emit(report, args) -> None:
    text = report if isinstance(report, str) else json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def run(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("SBPC_LOG", "WARNING").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    if args.format == "csv" and args.command != "simulate":
        parser.print_usage(sys.stderr)
        sys.stderr.write("sbpc: error: --format csv is only available for simulate\n")
        return EXIT_USAGE
    try:
        report, code = COMMANDS[args.command](args)
    except (OSError, InstanceError) as e:
        sys.stderr.write(f"sbpc: cannot read instance: {e}\n")
        return EXIT_INSTANCE
    except _UsageError as e:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"sbpc: error: {e}\n")
        return EXIT_USAGE
    except (RouteError, BayesError) as e:
        sys.stderr.write(f"sbpc: error: {e}\n")
        return EXIT_USAGE
    _emit(report, args)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
