"""Experiment configuration: TOML grammar, defaults and validation (see FORMATS.md)."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .covariance import CovarianceModel
from .errors import ConfigError, SpdeLabError
from .noise import GridSpec
from .solvability import AdmissibilityReport, ProblemSpec, check_admissible, gamma_star
from .solver import (AssumptionReport, Coefficients, DiffusionSpec, MonitorConfig, bump,
                     check_assumptions, coefficient_preset, constant)

SECTIONS = ("problem", "grid", "coefficients", "diffusion", "time", "monte_carlo",
            "monitors", "initial", "outputs")


@dataclass
class InitialSpec:
    kind: str = "bump"
    height: float = 1.0
    width: float | None = None

    def field(self, grid: GridSpec) -> np.ndarray:
        if self.kind == "bump":
            return bump(grid, self.width, self.height)
        if self.kind == "constant":
            return np.full(grid.shape, float(self.height))
        if self.kind == "zero":
            return np.zeros(grid.shape)
        raise ConfigError(f"unknown initial kind {self.kind!r}", field="initial.kind")


@dataclass
class ExperimentConfig:
    problem: ProblemSpec
    epsilon: float
    grid: GridSpec
    coefficients: Coefficients
    operator_form: str
    diffusion: DiffusionSpec
    dt: float
    T: float
    paths: int
    seed: int
    threads: int
    monitors: MonitorConfig
    threshold_factors: tuple
    probe_stride: int | None
    initial: InitialSpec
    out_dir: str
    write_trajectories: bool
    write_snapshots: bool
    admissibility: AdmissibilityReport
    assumptions: AssumptionReport
    echo: dict = field(default_factory=dict)
    source: str = ""


def _toml_error_line(exc) -> int | None:
    line = getattr(exc, "lineno", None)
    if line:
        return int(line)
    m = re.search(r"line (\d+)", str(exc))
    return int(m.group(1)) if m else None


def _key_line(text: str, section: str, key: str) -> int | None:
    current = ""
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]$", line)
        if m:
            current = m.group(1)
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return i
    return None


class _Reader:
    def __init__(self, data: dict, text: str):
        self.data, self.text = data, text
        self.used = set()

    def table(self, name: str) -> dict:
        node = self.data
        for part in name.split("."):
            node = node.get(part, {}) if isinstance(node, dict) else {}
        if not isinstance(node, dict):
            raise ConfigError(f"[{name}] must be a table", line=_key_line(self.text, name.rsplit(".", 1)[0], name.rsplit(".", 1)[-1]), field=name)
        return node

    def get(self, section: str, key: str, kind, default=None, required: bool = False):
        tab = self.table(section)
        name = f"{section}.{key}"
        if key not in tab:
            if required:
                raise ConfigError(f"missing required field {name}", field=name)
            return default
        value = tab[key]
        line = _key_line(self.text, section, key)
        if kind is float:
            if isinstance(value, str) and value.lower() in ("inf", "infinity"):
                return math.inf
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name} must be a number, got {value!r}", line=line, field=name)
            return float(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{name} must be an integer, got {value!r}", line=line, field=name)
            return int(value)
        if kind is str:
            if not isinstance(value, str):
                raise ConfigError(f"{name} must be a string, got {value!r}", line=line, field=name)
            return value
        if kind is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"{name} must be true or false, got {value!r}", line=line, field=name)
            return value
        if kind is list:
            if not isinstance(value, list):
                raise ConfigError(f"{name} must be an array, got {value!r}", line=line, field=name)
            return value
        return value


def _coefficients(rd: _Reader, grid: GridSpec) -> tuple[Coefficients, str, dict]:
    sec = "coefficients"
    xi = rd.get(sec, "xi", float, 1.0)
    form = rd.get(sec, "form", str, "nondivergence")
    if form not in ("nondivergence", "divergence"):
        raise ConfigError(f"coefficients.form must be nondivergence or divergence, got {form!r}",
                          line=_key_line(rd.text, sec, "form"), field="coefficients.form")
    preset = rd.get(sec, "preset", str, None)
    tab = rd.table(sec)
    echo = {"xi": xi, "form": form}
    if preset is not None:
        try:
            co = coefficient_preset(preset, grid, xi)
        except SpdeLabError as exc:
            raise ConfigError(str(exc), line=_key_line(rd.text, sec, "preset"), field="coefficients.preset")
        echo["preset"] = preset
    else:
        d = grid.d
        a = tab.get("a", 1.0)
        try:
            a = np.asarray(a, dtype=float)
            a = a * np.eye(d) if a.ndim == 0 else a.reshape(d, d)
            b = np.asarray(tab.get("b", [0.0] * d), dtype=float).reshape(d)
        except (TypeError, ValueError):
            raise ConfigError("coefficients.a must be a number or d x d array and b a length-d array",
                              line=_key_line(rd.text, sec, "a"), field="coefficients.a")
        c = rd.get(sec, "c", float, 0.0)
        eig = np.linalg.eigvalsh(0.5 * (a + a.T))
        kappa0 = rd.get(sec, "kappa0", float, float(eig[0]))
        K = rd.get(sec, "K", float, max(float(np.abs(a).max() + np.abs(b).max() + abs(c)), float(eig[-1]), abs(xi)))
        co = Coefficients(constant(a), constant(b), constant(c), constant(xi), kappa0, K, name="inline")
        echo.update({"a": a.tolist(), "b": b.tolist(), "c": c})
    for key in ("kappa0", "K"):
        if preset is not None and key in tab:
            setattr(co, key, rd.get(sec, key, float))
    echo.update({"kappa0": co.kappa0, "K": co.K})
    return co, form, echo


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: parse error: {exc}", line=_toml_error_line(exc))
    unknown = [k for k in data if k not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section [{unknown[0]}]", line=_key_line(text, "", unknown[0]) or
                          next((i for i, l in enumerate(text.splitlines(), 1) if l.strip().startswith(f"[{unknown[0]}")), None),
                          field=unknown[0])
    rd = _Reader(data, text)
    try:
        d = rd.get("problem", "d", int, 1)
        lam = rd.get("problem", "lambda", float, 0.0)
        cov = rd.table("problem.covariance")
        kind = cov.get("kind", "white")
        try:
            model = CovarianceModel.from_dict({**cov, "kind": kind, "d": d})
        except SpdeLabError as exc:
            raise ConfigError(f"problem.covariance: {exc}", line=_key_line(text, "problem.covariance", "kind"),
                              field="problem.covariance")
        gs = gamma_star(d, lam, model)
        gamma = rd.get("problem", "gamma", float, None)
        if gamma is None:
            gamma = gs / 2 if gs is not None else 0.1
        p = rd.get("problem", "p", float, None)
        if p is None:
            p = 2 * (d + 2) / gamma
        epsilon = rd.get("problem", "epsilon", float, 0.05)
        try:
            problem = ProblemSpec(d, lam, model, gamma, p)
        except SpdeLabError as exc:
            raise ConfigError(f"problem: {exc}", field="problem")

        gd = rd.get("grid", "d", int, d)
        if gd != d:
            raise ConfigError(f"grid dimension {gd} differs from problem dimension {d}",
                              line=_key_line(text, "grid", "d"), field="grid.d")
        try:
            grid = GridSpec(d, rd.get("grid", "n", int, 256), rd.get("grid", "L", float, 1.0))
        except SpdeLabError as exc:
            raise ConfigError(f"grid: {exc}", line=_key_line(text, "grid", "n"), field="grid")

        coeffs, form, co_echo = _coefficients(rd, grid)

        m = rd.get("diffusion", "m", float, 1e6)
        try:
            diffusion = DiffusionSpec(lam, m, rd.get("diffusion", "form", str, "truncated_power"))
        except SpdeLabError as exc:
            raise ConfigError(f"diffusion: {exc}", field="diffusion")

        dt = rd.get("time", "dt", float, required=True)
        T = rd.get("time", "T", float, required=True)
        if not (0 < dt < T):
            raise ConfigError(f"need 0 < dt < T, got dt={dt}, T={T}", line=_key_line(text, "time", "dt"), field="time.dt")

        paths = rd.get("monte_carlo", "paths", int, 1)
        if paths < 1:
            raise ConfigError("monte_carlo.paths must be >= 1", line=_key_line(text, "monte_carlo", "paths"),
                              field="monte_carlo.paths")
        seed = rd.get("monte_carlo", "seed", int, 0)
        threads = rd.get("monte_carlo", "threads", int, 1)

        init = InitialSpec(rd.get("initial", "kind", str, "bump"), rd.get("initial", "height", float, 1.0),
                           rd.get("initial", "width", float, None))
        if init.kind not in ("bump", "constant", "zero"):
            raise ConfigError(f"unknown initial kind {init.kind!r}", line=_key_line(text, "initial", "kind"),
                              field="initial.kind")
        factors = tuple(float(x) for x in rd.get("monitors", "thresholds", list, [2.0 ** k for k in range(1, 11)]))
        probe_stride = rd.get("monitors", "probe_stride", int, None)
        bessel = rd.get("monitors", "bessel", list, None)
        monitors = MonitorConfig(
            thresholds=(),
            record_every=rd.get("monitors", "record_every", int, 1),
            snapshot_times=tuple(float(x) for x in rd.get("monitors", "snapshot_times", list, [])),
            bessel=tuple(float(x) for x in bessel) if bessel else None,
            probe_points=None,
            probe_every=rd.get("monitors", "probe_every", int, 1),
            substeps=rd.get("monitors", "substeps", int, 1),
        )
        out_dir = rd.get("outputs", "dir", str, "out")
        write_traj = rd.get("outputs", "trajectories", bool, True)
        write_snap = rd.get("outputs", "snapshots", bool, True)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}")

    admissibility = check_admissible(problem)
    assumptions = check_assumptions(coeffs, grid, raise_on_failure=False)
    echo = {
        "problem": {"d": d, "lambda": lam, "gamma": gamma, "p": p, "epsilon": epsilon,
                    "covariance": model.to_dict()},
        "grid": grid.to_dict(),
        "coefficients": co_echo,
        "diffusion": {"m": m, "form": diffusion.form},
        "time": {"dt": dt, "T": T},
        "monte_carlo": {"paths": paths, "seed": seed},
        "monitors": {"thresholds": list(factors), "record_every": monitors.record_every,
                     "snapshot_times": list(monitors.snapshot_times),
                     "bessel": list(monitors.bessel) if monitors.bessel else None,
                     "probe_stride": probe_stride, "probe_every": monitors.probe_every,
                     "substeps": monitors.substeps},
        "initial": {"kind": init.kind, "height": init.height, "width": init.width},
    }
    return ExperimentConfig(problem, epsilon, grid, coeffs, form, diffusion, dt, T, paths, seed, threads,
                            monitors, factors, probe_stride, init, out_dir, write_traj, write_snap,
                            admissibility, assumptions, echo, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return parse_config(path.read_text(), str(path))
