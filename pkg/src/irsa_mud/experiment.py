"""Configuration-driven experiment grids: thresholds, DE traces, load sweeps.

A sweep walks the product of distributions x k x n x load x policy, runs the
density evolution and the seeded simulation for every cell, and writes
plot-ready CSV tables plus a manifest that pins every seed and the config hash.
Re-running the same spec with the same master seed reproduces the output files
byte for byte (the manifest deliberately records no wall-clock data).
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .de import SystemConfig, Variant, run_de
from .degree_dist import DegreeDistribution, resolve_distribution
from .errors import IrsaMudError, SpecInvalid
from .potential import capacity_bound, find_threshold
from .sim import ReceiverPolicy, run_replications

_DEFAULT_LOAD_STEP = 0.05
_DENSE_LOAD_STEP = 0.01
_DENSE_HALF_WIDTH = 0.1


@dataclass
class ExperimentSpec:
    """One sweep: the grid axes plus execution knobs."""

    distributions: list[str] = field(default_factory=lambda: ["L1"])
    k_list: list[int] = field(default_factory=lambda: [1, 2, 3])
    n_list: list[int] = field(default_factory=lambda: [200])
    loads: list[float] | None = None  # None: 0.05 grid on [0.1, 1], densified near threshold
    variant: str = Variant.UNIFORM_REPLICAS.value
    policies: list[str] = field(default_factory=lambda: ["unbounded"])
    horizon_frames: int = 100   # measured span, in frames, after warm-up
    warmup_frames: int = 10
    replications: int = 20
    master_seed: int = 1
    with_de: bool = True
    with_sim: bool = True
    de_tol: float = 1e-10
    de_horizon_frames: int = 200
    threshold_map: str = "node"
    out_dir: str = "results"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise SpecInvalid([f"unknown config key: {key}" for key in sorted(unknown)])
        return cls(**data)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def config_hash(self) -> str:
        canon = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ValidationReport:
    cells: int
    est_runtime_s: float
    notes: tuple[str, ...]


def _spec_problems(spec: ExperimentSpec) -> tuple[list[str], list[DegreeDistribution]]:
    problems: list[str] = []
    dists: list[DegreeDistribution] = []
    for text in spec.distributions:
        try:
            dists.append(resolve_distribution(text))
        except IrsaMudError as exc:
            problems.append(f"distribution {text!r}: {exc}")
    for k in spec.k_list:
        if k < 1:
            problems.append(f"k must be >= 1, got {k}")
    for n in spec.n_list:
        if n < 2:
            problems.append(f"n must be >= 2, got {n}")
        for d in dists:
            if d.max_degree > n:
                problems.append(f"max replica count {d.max_degree} exceeds frame length {n}")
    if spec.loads is not None:
        for load in spec.loads:
            if not (0.0 <= load <= 1.0):
                problems.append(f"normalized load outside [0, 1]: {load}")
    if spec.variant not in (v.value for v in Variant):
        problems.append(f"unknown variant {spec.variant!r}")
    for pol in spec.policies:
        try:
            ReceiverPolicy.parse(pol)
        except (ValueError, IrsaMudError) as exc:
            problems.append(f"policy {pol!r}: {exc}")
    if spec.horizon_frames < 2:
        problems.append(f"horizon_frames must be >= 2, got {spec.horizon_frames}")
    if spec.warmup_frames < 1:
        problems.append(f"warmup_frames must be >= 1, got {spec.warmup_frames}")
    if spec.replications < 1:
        problems.append(f"replications must be >= 1, got {spec.replications}")
    if spec.threshold_map not in ("node", "edge"):
        problems.append(f"unknown threshold_map {spec.threshold_map!r}")
    return problems, dists


def default_load_grid(threshold_load: float | None) -> list[float]:
    """Coarse 0.05 grid on [0.1, 1.0], refined to 0.01 around the waterfall."""
    grid = {round(0.1 + _DEFAULT_LOAD_STEP * i, 2) for i in range(19)}
    if threshold_load is not None:
        lo = threshold_load - _DENSE_HALF_WIDTH
        hi = threshold_load + _DENSE_HALF_WIDTH
        step = 0
        while True:
            load = round(lo + _DENSE_LOAD_STEP * step, 2)
            if load > hi:
                break
            if 0.0 < load <= 1.0:
                grid.add(load)
            step += 1
    return sorted(grid)


def validate_and_report(spec: ExperimentSpec) -> ValidationReport:
    """Dry-run consistency check; raises SpecInvalid with itemized reasons."""
    problems, _ = _spec_problems(spec)
    if problems:
        raise SpecInvalid(problems)
    notes = []
    out = Path(spec.out_dir)
    if not out.exists():
        out.mkdir(parents=True, exist_ok=True)
        notes.append(f"created output directory {out}")
    loads = spec.loads if spec.loads is not None else default_load_grid(None)
    cells = (
        len(spec.distributions) * len(spec.k_list) * len(spec.n_list) * len(loads) * len(spec.policies)
    )
    # crude per-cell cost model: simulation work scales with replica events,
    # DE work with its slot horizon.
    est = 0.0
    for k in spec.k_list:
        for n in spec.n_list:
            slots = (spec.warmup_frames + spec.horizon_frames + 4) * n
            events = slots * 0.6 * k * 4.0  # mid-grid load, typical mean degree
            est += (
                len(spec.distributions)
                * len(loads)
                * len(spec.policies)
                * (spec.with_sim * spec.replications * events * 2e-6 + spec.with_de * spec.de_horizon_frames * n * 1.5e-6)
            )
    return ValidationReport(cells=cells, est_runtime_s=est, notes=tuple(notes))


@dataclass(frozen=True)
class CellResult:
    key: tuple
    de_row: str | None
    sim_summary_row: str | None
    sim_run_rows: tuple[str, ...]
    error: str | None


def _run_cell(args) -> CellResult:
    (key, dist_text, k, n, load, policy_text, variant, spec_dict) = args
    spec = ExperimentSpec(**spec_dict)
    dist = resolve_distribution(dist_text)
    policy = ReceiverPolicy.parse(policy_text)
    lam = load * k
    cfg = SystemConfig(
        arrival_rate=lam,
        frame_length=n,
        mud_degree=k,
        variant=Variant(variant),
    )
    try:
        de_row = None
        if spec.with_de:
            de = run_de(cfg, dist, horizon=spec.de_horizon_frames * n, tol=spec.de_tol)
            de_row = (
                f"{dist_text},{variant},{k},{n},{lam:.17g},{load:.17g},"
                f"{de.plr:.17g},{int(de.converged)},{de.slots}"
            )
        sim_summary_row = None
        run_rows: tuple[str, ...] = ()
        if spec.with_sim:
            warmup = spec.warmup_frames * n
            from .sim import tail_exclusion

            horizon = warmup + spec.horizon_frames * n + tail_exclusion(cfg, policy)
            cell_seed = _cell_seed(spec.master_seed, key)
            runs, agg = run_replications(
                cfg, dist, policy, horizon, spec.replications, cell_seed, warmup=warmup
            )
            run_rows = tuple(f"{dist_text},{r.csv_row()}" for r in runs)
            sim_summary_row = (
                f"{dist_text},{variant},{k},{n},{lam:.17g},{load:.17g},"
                f"{policy.kind.value},{'' if policy.param is None else policy.param},"
                f"{agg.reps},{agg.master_seed},{agg.arrivals},{agg.decoded},{agg.lost},"
                f"{agg.plr:.17g},{agg.plr_half_width:.17g},{agg.avg_delay:.17g},"
                f"{agg.delay_half_width:.17g},{agg.throughput:.17g}"
            )
        return CellResult(key, de_row, sim_summary_row, run_rows, None)
    except Exception as exc:  # a failing cell is recorded, not fatal
        return CellResult(key, None, None, (), f"{type(exc).__name__}: {exc}")


def _cell_seed(master_seed: int, key: tuple) -> int:
    blob = json.dumps([master_seed, list(map(str, key))], separators=(",", ":")).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


def run_sweep(spec: ExperimentSpec, workers: int = 1, progress=None) -> dict:
    """Execute the grid and write thresholds.csv, de.csv, sim CSVs and manifest.json.

    Returns a summary dict with cell counts and any per-cell errors; output
    rows are written in grid order regardless of completion order.
    """
    problems, dists = _spec_problems(spec)
    if problems:
        raise SpecInvalid(problems)
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    # thresholds are shared across cells: compute once per (distribution, k)
    thresholds: dict[tuple[str, int], float] = {}
    threshold_rows = ["distribution,k,lambda_star,bracket_lo,bracket_hi,worst_margin,map,capacity_floor"]
    for dist_text, dist in zip(spec.distributions, dists):
        for k in spec.k_list:
            res = find_threshold(dist, k, fixed_point_map=spec.threshold_map)
            thresholds[(dist_text, k)] = res.threshold
            floor = k - capacity_bound(k)
            threshold_rows.append(
                f"{dist_text},{k},{res.threshold:.17g},{res.bracket[0]:.17g},"
                f"{res.bracket[1]:.17g},{res.worst_margin:.17g},{res.fixed_point_map},{floor:.17g}"
            )

    cells = []
    for dist_text in spec.distributions:
        for k in spec.k_list:
            loads = spec.loads
            if loads is None:
                loads = default_load_grid(thresholds[(dist_text, k)] / k)
            for n in spec.n_list:
                for load in loads:
                    for policy_text in spec.policies:
                        key = (dist_text, k, n, f"{load:.6g}", policy_text)
                        cells.append(
                            (key, dist_text, k, n, load, policy_text, spec.variant, asdict(spec))
                        )

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = []
        for i, cell in enumerate(cells):
            results.append(_run_cell(cell))
            if progress is not None:
                progress(i + 1, len(cells))
    results.sort(key=lambda r: r.key)

    de_rows = ["distribution,variant,k,n,lambda_a,load,plr_de,converged,slots"]
    sim_summary = [
        "distribution,variant,k,n,lambda_a,load,policy,param,reps,master_seed,"
        "arrivals,decoded,lost,plr,plr_hw,avg_delay,delay_hw,throughput"
    ]
    sim_runs = ["distribution," + "variant,k,n,lambda_a,load,policy,param,seed,arrivals,decoded,lost,plr,avg_delay,delay_p50,delay_p95,throughput"]
    errors = []
    for res in results:
        if res.error is not None:
            errors.append({"cell": list(res.key), "error": res.error})
            continue
        if res.de_row:
            de_rows.append(res.de_row)
        if res.sim_summary_row:
            sim_summary.append(res.sim_summary_row)
        sim_runs.extend(res.sim_run_rows)

    (out / "thresholds.csv").write_text("\n".join(threshold_rows) + "\n")
    if spec.with_de:
        (out / "de.csv").write_text("\n".join(de_rows) + "\n")
    if spec.with_sim:
        (out / "sim_summary.csv").write_text("\n".join(sim_summary) + "\n")
        (out / "sim_runs.csv").write_text("\n".join(sim_runs) + "\n")
    manifest = {
        "package_version": __version__,
        "config": asdict(spec),
        "config_hash": spec.config_hash(),
        "master_seed": spec.master_seed,
        "cells": len(cells),
        "failed_cells": errors,
        "cell_seeds": {
            "|".join(map(str, c[0])): _cell_seed(spec.master_seed, c[0]) for c in cells
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return {"cells": len(cells), "failed": len(errors), "errors": errors, "out_dir": str(out)}
