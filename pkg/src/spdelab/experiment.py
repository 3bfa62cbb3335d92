"""Monte Carlo orchestration, aggregation and persistence of experiment artifacts."""
from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentConfig
from .errors import ParameterError, SpdeLabError, StatisticsError
from .noise import build_sampler, stream_seed
from .regularity import compare_to_theory, estimate_holder, structure_function
from .solver import TrajectoryRecord, config_fingerprint, mass_martingale_stat, run_path

POSITIVITY_TOL = 1e-3


@dataclass
class RunManifest:
    out_dir: Path | None
    config: dict
    seeds: list
    artifacts: dict
    timings: dict
    aggregate: dict
    records: list = field(repr=False, default_factory=list)
    regularity: dict | None = None

    def to_dict(self) -> dict:
        return {"config": self.config, "seeds": self.seeds, "artifacts": self.artifacts,
                "timings": self.timings}


def resolve_threads(requested: int | None, config_threads: int = 1) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ParameterError(f"THREADS must be an integer, got {env!r}")
    return max(1, int(config_threads))


def _path_monitors(cfg: ExperimentConfig, sup0: float):
    probes = None
    if cfg.probe_stride:
        probes = np.arange(0, cfg.grid.n ** cfg.grid.d, cfg.probe_stride)
    return replace(cfg.monitors, thresholds=tuple(f * sup0 for f in cfg.threshold_factors),
                   probe_points=probes)


def run_single_path(cfg: ExperimentConfig, index: int, u0: np.ndarray | None = None) -> TrajectoryRecord:
    u0 = cfg.initial.field(cfg.grid) if u0 is None else u0
    sup0 = float(np.max(np.abs(u0)))
    sampler = build_sampler(cfg.problem.model, cfg.grid, cfg.seed, index)
    return run_path(u0, cfg.coefficients, cfg.diffusion, sampler, cfg.dt, cfg.T,
                    _path_monitors(cfg, sup0), cfg.operator_form, config_fingerprint(cfg.echo))


def run_records(cfg: ExperimentConfig, threads: int = 1) -> list[TrajectoryRecord]:
    """All paths, ordered by path index whatever the thread count."""
    u0 = cfg.initial.field(cfg.grid)
    work = lambda i: run_single_path(cfg, i, u0)
    if threads <= 1:
        return [work(i) for i in range(cfg.paths)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, range(cfg.paths)))


def aggregate(cfg: ExperimentConfig, records: list[TrajectoryRecord]) -> dict:
    u0 = cfg.initial.field(cfg.grid)
    sup0 = float(np.max(np.abs(u0)))
    ok = [r for r in records if not r.failed]
    out = {"paths": len(records), "completed": len(ok),
           "blown_up": sum(r.blown_up for r in records),
           "failed": sum(bool(r.failed) for r in records)}
    taus = []
    for f in cfg.threshold_factors:
        R = f * sup0
        hits = sum(1 for r in records if r.tau_hits.get(float(R)) is not None)
        taus.append({"factor": f, "R": R, "hits": hits, "hit_fraction": hits / len(records)})
    out["tau"] = taus
    A, B, C, _ = cfg.coefficients.fields(cfg.grid)
    applicable = bool(np.all(B == 0) and np.all(C == 0) and np.all(u0 >= 0))
    mass = {"t": cfg.T, "martingale_applicable": applicable, "mean_drift": None, "standard_error": None}
    if len(ok) >= 2:
        try:
            mean, se = mass_martingale_stat(ok, ok[0].times[-1])
            mass.update({"t": ok[0].times[-1], "mean_drift": mean, "standard_error": se})
        except StatisticsError as exc:
            mass["note"] = str(exc)
    out["mass"] = mass
    mins = np.concatenate([np.asarray(r.min_value) for r in records]) if records else np.zeros(0)
    tol = POSITIVITY_TOL * sup0
    out["positivity"] = {"tolerance": tol,
                         "fraction_within": float(np.mean(mins >= -tol)) if mins.size else None,
                         "max_violation": float(max(0.0, -mins.min())) if mins.size else None}
    finals = [r.sup_norm[-1] for r in ok]
    out["final_sup_norm_mean"] = float(np.mean(finals)) if finals else None
    return out


def regularity_from_records(cfg: ExperimentConfig, records: list[TrajectoryRecord]) -> dict | None:
    ok = [r for r in records if not r.failed]
    space = time_est = None
    result = {}
    notes = []
    # a too-short record leaves that direction unmeasured rather than failing the run
    if ok and ok[0].snapshots:
        snaps = np.array([np.stack([r.snapshots[k] for k in sorted(r.snapshots)]) for r in ok])
        try:
            sf = structure_function(snaps, "space", spacing=cfg.grid.dx, d=cfg.grid.d)
            space = estimate_holder(sf)
            result["space_structure"] = sf.rows()
        except StatisticsError as exc:
            notes.append(f"space: {exc}")
    if ok and ok[0].probes:
        series = np.array([np.asarray(r.probes) for r in ok])
        try:
            st = structure_function(series, "time", spacing=cfg.dt * cfg.monitors.probe_every)
            time_est = estimate_holder(st)
            result["time_structure"] = st.rows()
        except StatisticsError as exc:
            notes.append(f"time: {exc}")
    if notes:
        result["notes"] = notes
    if space is None and time_est is None:
        return result or None
    try:
        rep = compare_to_theory(space, time_est, cfg.problem, cfg.epsilon)
        result["report"] = rep.to_dict()
    except SpdeLabError as exc:
        result["report"] = {"verdict": "not_applicable", "note": str(exc)}
    for name, est in (("space", space), ("time", time_est)):
        if est is not None:
            result[f"{name}_estimate"] = {"exponent": est.exponent, "ci": list(est.ci),
                                          "standard_error": est.standard_error,
                                          "inconclusive": est.inconclusive, "replicates": est.replicates}
    return result


def _write_artifacts(cfg: ExperimentConfig, records, agg, reg, out: Path) -> list[Path]:
    files = []
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "config.json", cfg.echo)
    io.write_json(out / "admissibility.json", cfg.admissibility.to_dict())
    io.write_json(out / "assumptions.json", cfg.assumptions.to_dict())
    io.write_json(out / "aggregate.json", agg)
    files += [out / "config.json", out / "admissibility.json", out / "assumptions.json", out / "aggregate.json"]
    if cfg.write_trajectories:
        tdir = out / "trajectories"
        tdir.mkdir(exist_ok=True)
        for i, rec in enumerate(records):
            csv_path = tdir / f"path_{i:04d}.csv"
            io.write_csv(csv_path, ["t", "sup_norm", "l1_mass", "min_value", "bessel_norm"], rec.rows())
            io.write_json(tdir / f"path_{i:04d}.json", rec.summary())
            files += [csv_path, tdir / f"path_{i:04d}.json"]
    if cfg.write_snapshots:
        for i, rec in enumerate(records):
            if rec.snapshots:
                sdir = out / "snapshots"
                sdir.mkdir(exist_ok=True)
                keys = sorted(rec.snapshots)
                p = sdir / f"path_{i:04d}.bin"
                io.write_field(p, np.stack([rec.snapshots[k] for k in keys]),
                               {"times": keys, "grid": cfg.grid.to_dict(), "path": i})
                files += [p, io.sidecar_path(p)]
            if rec.probes:
                pdir = out / "probes"
                pdir.mkdir(exist_ok=True)
                p = pdir / f"path_{i:04d}.bin"
                io.write_field(p, np.asarray(rec.probes),
                               {"dt": cfg.dt * cfg.monitors.probe_every, "t0": rec.probe_times[0],
                                "stride": cfg.probe_stride, "grid": cfg.grid.to_dict(), "path": i})
                files += [p, io.sidecar_path(p)]
    if reg is not None:
        io.write_json(out / "regularity.json", reg)
        files.append(out / "regularity.json")
    return files


def run_experiment(cfg: ExperimentConfig, threads: int | None = None, out_dir=None,
                   force: bool = False, write: bool = True) -> RunManifest:
    if not cfg.admissibility.admissible and not force:
        raise ParameterError(f"problem is not admissible ({cfg.admissibility.rejection_reason}); use force")
    threads = resolve_threads(threads, cfg.threads)
    start = time.perf_counter()
    records = run_records(cfg, threads)
    wall = time.perf_counter() - start
    if records and all(r.failed for r in records):
        raise SpdeLabError(f"all {len(records)} paths failed: {records[0].failed}")
    agg = aggregate(cfg, records)
    reg = regularity_from_records(cfg, records)
    seeds = [{"path": i, "stream": i, "seed": stream_seed(cfg.seed, i)} for i in range(cfg.paths)]
    artifacts = {}
    out = None
    if write:
        out = Path(out_dir if out_dir is not None else cfg.out_dir)
        files = _write_artifacts(cfg, records, agg, reg, out)
        artifacts = {str(p.relative_to(out)): io.file_hash(p) for p in files}
    steps = sum(r.steps for r in records)
    timings = {"wall_seconds": wall, "threads": threads, "total_steps": steps,
               "seconds_per_step": wall / steps if steps else None}
    manifest = RunManifest(out, cfg.echo, seeds, artifacts, timings, agg, records, reg)
    if write:
        io.write_json(out / "manifest.json", manifest.to_dict())
    return manifest
