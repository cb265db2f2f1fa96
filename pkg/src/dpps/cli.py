"""Command line: ``dpps {solve,run,admm,attack,sweep}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from dpps.algorithms import AdmmConfig, DistributedContext, RuleConfig, RunTrace, run_dp_admm, run_dp_ps
from dpps.attack import DEFAULT_GAMMA, AttackSpec, make_windows, run_attack
from dpps.experiments import compute_ae, iterations_to_gap, load_config, run_experiment
from dpps.model import build_centralized_soc
from dpps.network import load_case
from dpps.partition import (ZonePartition, assignment_from_lists, build_partition, fixed_zone_assignment,
                            greedy_partition)
from dpps.privacy import PrivacyParams, SensitivityCache, accountant_report
from dpps.solver import solve


def _eps(text: str) -> float:
    if text.lower() in ("inf", "infinity"):
        return math.inf
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("epsilon must be positive")
    return v


def _partition(net, args) -> ZonePartition:
    """--zones fixed | k | path to a JSON list of bus-id lists."""
    z = args.zones
    if z == "fixed":
        return build_partition(net, fixed_zone_assignment(net))
    if z.isdigit():
        return build_partition(net, greedy_partition(net, int(z), args.partition_seed))
    lists = json.loads(Path(z).read_text())
    return build_partition(net, assignment_from_lists(net, lists))


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--case", default="case14", help="bundled case name or .m/.json path")
    p.add_argument("--zones", default="fixed", help="'fixed', a zone count k, or a JSON file of bus-id lists")
    p.add_argument("--partition-seed", type=int, default=0, help="seed of the greedy partitioner")
    p.add_argument("--epsilon", type=_eps, default=math.inf, help="per-iteration privacy level ('inf' = none)")
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--accountant", choices=("iter", "run"), default="iter")
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--out", required=True, help="trace output directory")
    p.add_argument("--sensitivity-cache", default=None, metavar="DIR", help="reuse sensitivities stored in DIR")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpps", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("solve", help="centralized SOC relaxation")
    p.add_argument("--case", default="case14")

    p = sub.add_parser("run", help="DP projected subgradient")
    _common(p)
    p.add_argument("--rule", type=int, choices=(1, 2, 3), default=3)
    p.add_argument("--a", type=float, default=1.0, help="Rule-1 constant")
    p.add_argument("--chi", type=float, default=1.5, help="Rule-3 deflection parameter")
    p.add_argument("--target", type=float, default=None, help="Polyak target (default: centralized optimum)")
    p.add_argument("--gap-stop", type=float, default=None, help="stop once the gap (%%) drops below this")
    p.add_argument("--no-project-direction", action="store_true")

    p = sub.add_parser("admm", help="DP-ADMM baseline")
    _common(p)
    p.add_argument("--rho", type=float, default=100.0)

    p = sub.add_parser("attack", help="load inference against a saved trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--case", default=None, help="defaults to the case recorded in the trace")
    p.add_argument("--zone", type=int, required=True, help="1-based zone index")
    p.add_argument("--bus", type=int, required=True, help="original bus id of the target load")
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--T", default="1", help="comma-separated window lengths")
    p.add_argument("--gbar", type=float, default=1.0, help="success threshold (%%)")
    p.add_argument("--out", default=None, help="CSV of per-window estimates")

    p = sub.add_parser("sweep", help="run an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="override the config's output directory")
    return ap


def _summarize(trace: RunTrace, z_star: float) -> dict:
    ae = compute_ae(trace, z_star)
    return {"iterations": len(trace), "z_star": z_star, "final_gap_pct": float(ae[-1]),
            "iterations_to_1pct": iterations_to_gap(ae)}


def cmd_solve(args) -> int:
    net = load_case(args.case)
    res = solve(build_centralized_soc(net))
    print(json.dumps({"case": net.name, "status": res.status, "objective": res.objective,
                      "solve_time": res.solve_time}))
    return 0 if res.ok else 1


def cmd_run(args, admm: bool) -> int:
    net = load_case(args.case)
    cache = SensitivityCache(args.sensitivity_cache) if args.sensitivity_cache else None
    ctx = DistributedContext(net, _partition(net, args), sens_cache=cache)
    params = PrivacyParams(epsilon_bar=args.epsilon, beta=args.beta, accountant=args.accountant, seed=args.seed)
    if admm:
        trace = run_dp_admm(ctx, AdmmConfig(rho=args.rho), params, args.iters, keep_zone_x=True)
    else:
        rule = RuleConfig(rule=args.rule, a=args.a, chi=args.chi, target_value=args.target,
                          project_direction=not args.no_project_direction)
        trace = run_dp_ps(ctx, rule, params, args.iters, gap_stop=args.gap_stop)
    trace.meta["privacy_accounting"] = accountant_report(params, args.iters)
    trace.meta["z_star"] = ctx.z_star
    trace.save(args.out)
    print(json.dumps({"out": args.out, **_summarize(trace, ctx.z_star)}))
    return 0


def cmd_attack(args) -> int:
    trace = RunTrace.load(args.trace)
    net = load_case(args.case or trace.meta["case"])
    lists = [[net.buses[i].id for i in zn] for zn in trace.meta["zones"]]
    part = build_partition(net, assignment_from_lists(net, lists))
    bus = net.bus_index(args.bus)
    rows = []
    summary = {}
    for T in (int(t) for t in args.T.split(",")):
        spec = AttackSpec(args.zone - 1, bus, trace, gamma=args.gamma, windows=make_windows(len(trace), T))
        res = run_attack(net, part, spec, args.gbar)
        summary[T] = {"windows": len(spec.windows), "average_dee": res.average_dee, "cos": res.cos}
        rows += [(T, w[0], w[-1], e * net.base_mva, d) for w, e, d in zip(spec.windows, res.estimates, res.de_per_window)]
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(out, np.array(rows), delimiter=",", header="T,first,last,estimate_mw,de_pct", comments="")
    print(json.dumps(summary))
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    out = run_experiment(cfg)
    failed = json.loads((out / "manifest.json").read_text())["failed_cells"]
    print(json.dumps({"out": str(out), "failed_cells": failed}))
    return 1 if failed else 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if args.cmd == "solve":
        return cmd_solve(args)
    if args.cmd in ("run", "admm"):
        return cmd_run(args, admm=args.cmd == "admm")
    if args.cmd == "attack":
        return cmd_attack(args)
    return cmd_sweep(args)


if __name__ == "__main__":
    sys.exit(main())
