"""Command-line interface.

Subcommands: ``de``, ``threshold``, ``potential``, ``simulate``, ``sweep``,
``validate``.  Exit codes: 0 success, 2 invalid spec/arguments, 3 a sweep
finished with failing cells.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .de import SystemConfig, Variant, run_de
from .degree_dist import resolve_distribution
from .errors import IrsaMudError, SpecInvalid
from .experiment import ExperimentSpec, run_sweep, validate_and_report
from .potential import capacity_bound, find_threshold, potential_profile
from .sim import ReceiverPolicy, run_replications, run_simulation

EXIT_OK = 0
EXIT_SPEC_INVALID = 2
EXIT_PARTIAL_FAILURE = 3


def _write(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _rows_to_json(header: str, rows: list[str]) -> str:
    keys = header.split(",")
    records = []
    for row in rows:
        rec = {}
        for key, val in zip(keys, row.split(",")):
            try:
                rec[key] = int(val) if val.lstrip("-").isdigit() else float(val)
            except ValueError:
                rec[key] = val
        records.append(rec)
    return json.dumps(records, indent=2) + "\n"


def _emit(header: str, rows: list[str], args) -> None:
    if args.format == "json":
        _write(_rows_to_json(header, rows), args.out)
    else:
        _write("\n".join([header] + rows) + "\n", args.out)


def _system_config(args) -> SystemConfig:
    lam = args.lam if args.lam is not None else args.load * args.k
    return SystemConfig(
        arrival_rate=lam,
        frame_length=args.n,
        mud_degree=args.k,
        variant=Variant(args.variant),
        startup=getattr(args, "startup", False),
        z_convention=getattr(args, "z_convention", "appendix"),
    )


def _add_common(p: argparse.ArgumentParser, *, with_rate: bool = True) -> None:
    p.add_argument("--dist", default="L1", help="preset name (L0..L3) or polynomial text like '0.86*x^3 + 0.14*x^8'")
    p.add_argument("--k", type=int, default=2, help="MUD degree of the receiver")
    if with_rate:
        group = p.add_mutually_exclusive_group()
        group.add_argument("--lam", type=float, default=None, help="arrival rate, packets per slot")
        group.add_argument("--load", type=float, default=0.5, help="normalized load; arrival rate = load * k")
    p.add_argument("--out", default="-", help="output file, '-' for stdout")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def cmd_de(args) -> int:
    dist = resolve_distribution(args.dist)
    cfg = _system_config(args)
    res = run_de(cfg, dist, horizon=args.horizon, tol=args.tol)
    if args.format == "json":
        payload = {
            "plr": res.plr,
            "converged": res.converged,
            "slots": res.slots,
            "trace": [
                {"slot": i + 1, "q": float(res.q_trace[i]), "p_bar": float(res.p_bar_trace[i]), "plr": float(res.plr_trace[i])}
                for i in range(res.slots)
            ],
        }
        _write(json.dumps(payload, indent=2) + "\n", args.out)
    else:
        _write(res.trace_csv(), args.out)
    return EXIT_OK


def cmd_threshold(args) -> int:
    dist = resolve_distribution(args.dist)
    res = find_threshold(dist, args.k, tol_lambda=args.tol, fixed_point_map=args.map)
    floor = args.k - capacity_bound(args.k)
    header = "distribution,k,lambda_star,bracket_lo,bracket_hi,worst_margin,map,capacity_floor"
    row = (
        f"{args.dist},{args.k},{res.threshold:.17g},{res.bracket[0]:.17g},"
        f"{res.bracket[1]:.17g},{res.worst_margin:.17g},{res.fixed_point_map},{floor:.17g}"
    )
    _emit(header, [row], args)
    return EXIT_OK


def cmd_potential(args) -> int:
    dist = resolve_distribution(args.dist)
    lam = args.lam if args.lam is not None else args.load * args.k
    prof = potential_profile(dist, args.k, lam, points=args.points)
    header = "x,U,U_prime"
    rows = [
        f"{x:.17g},{u:.17g},{d:.17g}"
        for x, u, d in zip(prof.xs, prof.values, prof.derivatives)
    ]
    _emit(header, rows, args)
    return EXIT_OK


def cmd_simulate(args) -> int:
    dist = resolve_distribution(args.dist)
    cfg = _system_config(args)
    policy = ReceiverPolicy.parse(args.policy)
    horizon = args.horizon if args.horizon is not None else 30 * args.n
    header = "variant,k,n,lambda_a,load,policy,param,seed,arrivals,decoded,lost,plr,avg_delay,delay_p50,delay_p95,throughput"
    if args.reps > 1:
        runs, _ = run_replications(cfg, dist, policy, horizon, args.reps, args.seed, warmup=args.warmup)
        rows = [r.csv_row() for r in runs]
    else:
        metrics = run_simulation(
            cfg, dist, policy, horizon, args.seed, warmup=args.warmup, collect_trace=args.trace
        )
        rows = [metrics.csv_row()]
        if args.trace:
            trace_rows = [f"{uid},{arrival},{outcome}" for uid, arrival, outcome in metrics.packet_log]
            _write("\n".join(["uid,arrival_slot,decoded_slot"] + trace_rows) + "\n", args.trace_out)
    _emit(header, rows, args)
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = ExperimentSpec.from_json(args.config)
    if args.out is not None:
        spec.out_dir = args.out
    if args.seed is not None:
        spec.master_seed = args.seed
    report = validate_and_report(spec)
    print(f"sweep: {report.cells} cells, estimated {report.est_runtime_s:.0f}s", file=sys.stderr)
    summary = run_sweep(spec, workers=args.workers)
    print(
        f"sweep finished: {summary['cells'] - summary['failed']}/{summary['cells']} cells ok, "
        f"outputs in {summary['out_dir']}",
        file=sys.stderr,
    )
    return EXIT_PARTIAL_FAILURE if summary["failed"] else EXIT_OK


def cmd_validate(args) -> int:
    spec = ExperimentSpec.from_json(args.config)
    report = validate_and_report(spec)
    print(f"spec ok: {report.cells} cells, estimated runtime {report.est_runtime_s:.0f}s")
    for note in report.notes:
        print(f"note: {note}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irsa-mud", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("de", help="per-slot density evolution trace")
    _add_common(p)
    p.add_argument("--n", type=int, default=200, help="frame length in slots")
    p.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.UNIFORM_REPLICAS.value)
    p.add_argument("--startup", action="store_true", help="model a system that starts empty")
    p.add_argument("--z-convention", dest="z_convention", choices=("appendix", "theorem"), default="appendix")
    p.add_argument("--horizon", type=int, default=None, help="max slots (default 200n)")
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_de)

    p = sub.add_parser("threshold", help="decoding threshold for a distribution")
    _add_common(p, with_rate=False)
    p.add_argument("--tol", type=float, default=1e-3, help="bisection tolerance on the arrival rate")
    p.add_argument("--map", choices=("node", "edge"), default="node")
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("potential", help="(x, U, U') table for plotting")
    _add_common(p)
    p.add_argument("--points", type=int, default=1001)
    p.set_defaults(func=cmd_potential)

    p = sub.add_parser("simulate", help="Monte-Carlo simulation")
    _add_common(p)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.UNIFORM_REPLICAS.value)
    p.add_argument("--policy", default="unbounded", help="unbounded | max_delay:D | max_memory:M | window:W")
    p.add_argument("--horizon", type=int, default=None, help="slots to simulate (default 30n)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--trace", action="store_true", help="dump a per-packet outcome table")
    p.add_argument("--trace-out", default="-")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run an experiment grid from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="override the spec's output directory")
    p.add_argument("--seed", type=int, default=None, help="override the spec's master seed")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="dry-run check of a sweep config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecInvalid as exc:
        for reason in exc.reasons:
            print(f"spec invalid: {reason}", file=sys.stderr)
        return EXIT_SPEC_INVALID
    except IrsaMudError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC_INVALID


if __name__ == "__main__":
    sys.exit(main())
