"""Command-line interface: ``spdelab <subcommand> [options]``.

Exit codes: 0 success, 1 usage, 2 configuration, 3 numeric failure, 4 check failure.
"""
from __future__ import annotations

import argparse
import csv
import glob
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .covariance import (CovarianceModel, bessel_fourier_check, bessel_kernel, covariance_fourier_check,
                         decay_envelope_check, kernel_self_convolution, kernel_table)
from .errors import (ConfigError, InvariantViolation, ModelResolutionError, NumericError, ParameterError,
                     SpdeLabError, StatisticsError)
from .noise import GridSpec, build_sampler, covariance_lags, empirical_covariance, save_increments
from .regularity import compare_to_theory, estimate_holder, structure_function
from .solvability import ProblemSpec, check_admissible

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _model_from_args(args) -> CovarianceModel:
    if args.cov == "white":
        return CovarianceModel.white() if args.d == 1 else CovarianceModel("white", args.d)
    if args.cov == "riesz":
        return CovarianceModel.riesz(args.alpha, args.d)
    return CovarianceModel.gaussian(args.c, args.d)


def _emit(args, payload: dict, text: str) -> None:
    if args.format == "json":
        sys.stdout.write(io.dumps(payload))
    else:
        print(text)


def cmd_admissible(args) -> int:
    model = _model_from_args(args)
    report = check_admissible(ProblemSpec(args.d, args.lam, model, args.gamma, args.p))
    if report.admissible:
        text = (f"admissible under condition ({report.matched_condition}); "
                f"all matching: {', '.join(report.matched_conditions)}\n")
    else:
        text = f"not admissible: {report.rejection_reason}\n"
    hw = report.holder_window
    gs = "none" if report.gamma_star is None else f"{report.gamma_star:g} (supremum, not attained)"
    text += (f"gamma0 = {report.gamma0:g}, gamma1 = {report.gamma1:g}, gamma* = {gs}\n"
             f"p_min = {report.p_min:g}\n"
             f"Holder window: 1/p = {hw.alpha_range[0]:g} < alpha < beta < {hw.beta_range[1]:g}, "
             f"delta_max = {hw.delta_max:g}")
    _emit(args, report.to_dict(), text)
    return EXIT_OK


def verify_kernel_suite(d: int) -> list[tuple[str, bool, str]]:
    """(name, passed, detail) for the covariance-module checks in dimension d."""
    out = []
    if d == 1:
        for g in (0.5, 1.0, 2.0):
            r = bessel_fourier_check(g)
            out.append((f"fourier identity gamma={g}", r["max_rel_error"] < 0.02,
                        f"max rel error {r['max_rel_error']:.3g}"))
        r0, r1 = bessel_kernel(2, 1, [0.0]), bessel_kernel(2, 1, [1.0])
        err = max(abs(r0 - 0.5), abs(r1 - math.exp(-1) / 2))
        out.append(("closed form R_2(0), R_2(1)", err < 1e-6, f"abs error {err:.3g}"))
        for model in (CovarianceModel.gaussian(1.0), CovarianceModel.riesz(0.5)):
            r = covariance_fourier_check(model, 4096, 400.0)
            out.append((f"covariance round trip {model.kind}", r["max_rel_error"] < 0.02,
                        f"max rel error {r['max_rel_error']:.3g}"))
        for g in (0.5, 1.0):
            t = kernel_table(g, 1)
            out.append((f"kernel table gamma={g} positive, nonincreasing", t.positive() and t.is_nonincreasing(), ""))
        cases = [(0.8, 1.0), (0.7, 4 / 3)]
    else:
        for g in (0.5, float(d)):
            t = kernel_table(g, d, np.logspace(-3, 1, 25))
            out.append((f"kernel table gamma={g} positive, nonincreasing", t.positive() and t.is_nonincreasing(), ""))
        cases = [(0.5, 1.0)]
    for g, r in cases:
        tab = kernel_self_convolution(g, r, d)
        env = decay_envelope_check(tab)
        out.append((f"decay envelope gamma={g} r={r:.4g}", env.holds,
                    f"within {env.fraction_within:.0%}, decay rate {env.decay_rate:.3g} >= {env.decay_rate_required:.3g}"))
    return out


def cmd_verify_kernels(args) -> int:
    results = verify_kernel_suite(args.d)
    lines = [f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip() for name, ok, detail in results]
    _emit(args, {"d": args.d, "checks": [{"name": n, "passed": ok, "detail": det} for n, ok, det in results]},
          "\n".join(lines))
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_CHECK


def cmd_sample_noise(args) -> int:
    model = _model_from_args(args)
    grid = GridSpec(args.d, args.n, args.L)
    sampler = build_sampler(model, grid, args.seed, args.stream)
    incs = [sampler.sample(args.dt) for _ in range(args.count)]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_increments(out / "increments.bin", incs, grid, model)
    lags = list(range(args.max_lag + 1))
    est = empirical_covariance(incs, lags)
    ref = covariance_lags(model, grid)
    ref_line = ref.reshape(-1)[: args.max_lag + 1] if grid.d == 1 else ref[(slice(0, args.max_lag + 1),) + (0,) * (grid.d - 1)]
    rows = [(e.lag if np.isscalar(e.lag) else e.lag[0], e.estimate, e.standard_error, args.dt * float(r))
            for e, r in zip(est, ref_line)]
    if args.format == "json":
        io.write_json(out / "covariance.json", [dict(zip(("lag", "estimate", "standard_error", "expected"), r))
                                                for r in rows])
    else:
        io.write_csv(out / "covariance.csv", ["lag", "estimate", "standard_error", "expected"], rows)
    print(f"wrote {args.count} increments and covariance estimates to {out} "
          f"(clamped fraction {sampler.clamped_fraction:.3g}, route {sampler.route})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .config import load_config
    from .experiment import run_experiment
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.echo["monte_carlo"]["seed"] = args.seed
    if not cfg.admissibility.admissible and not args.force:
        print(f"rejected: {cfg.admissibility.rejection_reason} (pass --force to run anyway)", file=sys.stderr)
        return EXIT_CONFIG
    if not cfg.assumptions.passed and not args.force:
        print(f"coefficient assumptions fail: {cfg.assumptions.worst_point} (pass --force to run anyway)",
              file=sys.stderr)
        return EXIT_CONFIG
    manifest = run_experiment(cfg, threads=args.threads, out_dir=args.out_dir or cfg.out_dir, force=args.force)
    agg = manifest.aggregate
    print(f"{agg['completed']}/{agg['paths']} paths completed, {agg['blown_up']} blown up; "
          f"artifacts in {manifest.out_dir}")
    return EXIT_OK


def _problem_from_echo(echo: dict) -> tuple[ProblemSpec, float]:
    p = echo["problem"]
    model = CovarianceModel.from_dict(p["covariance"])
    return ProblemSpec(p["d"], p["lambda"], model, p["gamma"], p["p"]), p.get("epsilon", 0.05)


def cmd_estimate_holder(args) -> int:
    run = Path(args.dir)
    cfg_path = run / "config.json"
    if not cfg_path.is_file():
        raise ConfigError(f"{cfg_path} not found; point --dir at a simulate output directory")
    import json
    echo = json.loads(cfg_path.read_text())
    spec, eps = _problem_from_echo(echo)
    eps = args.epsilon if args.epsilon is not None else eps
    d = echo["grid"]["d"]
    dx = echo["grid"]["L"] / echo["grid"]["n"]
    space = time_est = None
    snaps = sorted(glob.glob(str(run / "snapshots" / "path_*.bin")))
    probes = sorted(glob.glob(str(run / "probes" / "path_*.bin")))
    if not snaps and not probes:
        raise StatisticsError(f"no snapshots or probes under {run}")
    result = {}
    if snaps:
        data = np.array([io.read_field(p)[0] for p in snaps])
        sf = structure_function(data, "space", q=args.q, spacing=dx, d=d)
        space = estimate_holder(sf)
        result["space_structure"] = sf.rows()
    if probes:
        fields = [io.read_field(p) for p in probes]
        sf_t = structure_function(np.array([f[0] for f in fields]), "time", q=args.q, spacing=fields[0][1]["dt"])
        time_est = estimate_holder(sf_t)
        result["time_structure"] = sf_t.rows()
    rep = compare_to_theory(space, time_est, spec, eps, args.tolerance)
    result["report"] = rep.to_dict()
    out = Path(args.out_dir) if args.out_dir else run
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "holder_estimate.json", result)
    lines = []
    if space is not None:
        lines.append(f"space exponent {space.exponent:.4f} CI [{space.ci[0]:.4f}, {space.ci[1]:.4f}] "
                     f"target {rep.target_space:.4f}: {rep.space_verdict}")
    if time_est is not None:
        lines.append(f"time exponent {time_est.exponent:.4f} CI [{time_est.ci[0]:.4f}, {time_est.ci[1]:.4f}] "
                     f"target {rep.target_time:.4f}: {rep.time_verdict}")
    lines.append(f"verdict: {rep.verdict}")
    _emit(args, result["report"], "\n".join(lines))
    return EXIT_OK


def _svg_plot(series: dict, path: Path, title: str) -> None:
    width, height, pad = 640, 400, 50
    xs = np.concatenate([np.asarray(v[0]) for v in series.values()])
    ys = np.concatenate([np.asarray(v[1]) for v in series.values()])
    x0, x1 = float(xs.min()), float(xs.max()) or 1.0
    y0, y1 = float(ys.min()), float(ys.max())
    if y1 == y0:
        y1 = y0 + 1.0
    sx = lambda x: pad + (x - x0) / ((x1 - x0) or 1.0) * (width - 2 * pad)
    sy = lambda y: height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="{pad}" y="25" font-size="14">{title}</text>',
             f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
             'fill="none" stroke="#888"/>']
    for i, (name, (x, y)) in enumerate(series.items()):
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        col = colors[i % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{col}" points="{pts}"/>')
        parts.append(f'<text x="{width - pad - 150}" y="{pad + 18 * (i + 1)}" fill="{col}" font-size="12">{name}</text>')
    parts.append(f'<text x="{pad}" y="{height - 15}" font-size="11">t from {x0:.4g} to {x1:.4g}; '
                 f'y from {y0:.4g} to {y1:.4g}</text></svg>')
    path.write_text("\n".join(parts) + "\n")


def cmd_report(args) -> int:
    run = Path(args.dir)
    files = sorted(glob.glob(str(run / "trajectories" / "path_*.csv")))
    if not files:
        raise ConfigError(f"no trajectory CSVs under {run / 'trajectories'}")
    tables = []
    for f in files:
        with open(f) as fh:
            rows = list(csv.DictReader(fh))
        tables.append(rows)
    n = min(len(t) for t in tables)
    t = np.array([float(r["t"]) for r in tables[0][:n]])
    sup = np.array([[float(r["sup_norm"]) for r in tab[:n]] for tab in tables])
    l1 = np.array([[float(r["l1_mass"]) for r in tab[:n]] for tab in tables])
    mn = np.array([[float(r["min_value"]) for r in tab[:n]] for tab in tables])
    out = Path(args.out_dir) if args.out_dir else run
    out.mkdir(parents=True, exist_ok=True)
    rows = list(zip(t, sup.mean(0), l1.mean(0), mn.min(0)))
    if args.format == "json":
        io.write_json(out / "summary.json", [dict(zip(("t", "mean_sup_norm", "mean_l1_mass", "min_value"), r))
                                             for r in rows])
    else:
        io.write_csv(out / "summary.csv", ["t", "mean_sup_norm", "mean_l1_mass", "min_value"], rows)
    _svg_plot({"mean sup norm": (t, sup.mean(0)), "mean L1 mass": (t, l1.mean(0))},
              out / "summary.svg", f"{len(files)} paths")
    print(f"wrote summary of {len(files)} paths to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--out-dir", default=None, help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--threads", type=int, default=None, help="worker threads (THREADS env also honoured)")
    common.add_argument("--force", action="store_true", help="run even if the problem is rejected")

    parser = _Parser(prog="spdelab", description=__doc__, parents=[common],
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def model_args(p):
        p.add_argument("--d", type=int, default=1)
        p.add_argument("--cov", choices=("white", "riesz", "gaussian"), default="white")
        p.add_argument("--alpha", type=float, default=0.5, help="Riesz exponent")
        p.add_argument("--c", type=float, default=1.0, help="Gaussian rate")

    p = sub.add_parser("admissible", parents=[common], help="print the admissibility report")
    model_args(p)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--p", type=float, required=True)
    p.set_defaults(func=cmd_admissible)

    p = sub.add_parser("verify-kernels", parents=[common], help="run the kernel invariant suite")
    p.add_argument("--d", type=int, default=1, choices=(1, 2))
    p.set_defaults(func=cmd_verify_kernels)

    p = sub.add_parser("sample-noise", parents=[common], help="emit noise increments and their covariance")
    model_args(p)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--L", type=float, default=40.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--max-lag", type=int, default=16)
    p.set_defaults(func=cmd_sample_noise)

    p = sub.add_parser("simulate", parents=[common], help="run an experiment from a TOML config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate-holder", parents=[common], help="Holder exponents from stored snapshots")
    p.add_argument("--dir", required=True, help="simulate output directory")
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--tolerance", type=float, default=0.0)
    p.set_defaults(func=cmd_estimate_holder)

    p = sub.add_parser("report", parents=[common], help="CSV/SVG summary of a simulate run")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.seed is None:
        args.seed = None if args.command == "simulate" else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParameterError, InvariantViolation) as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ModelResolutionError, StatisticsError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SpdeLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
