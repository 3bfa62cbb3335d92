"""Semi-implicit time stepping of the truncated equation and its monitors.

One step solves

    (I - dt L_t) u+ = u + sigma_m(u) W,   sigma_m(u) = xi |(-m) v u ^ m|^{1+lambda},

with L_t = a^{ij} D_ij + b^i D_i + c discretised by second-order centred
differences on the periodic grid, and W a noise increment over dt (Ito).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import AssumptionViolation, NumericError, ParameterError, StatisticsError
from .noise import GridSpec, NoiseIncrement, NoiseSampler

RESIDUAL_TOL = 1e-10


# ---------------------------------------------------------------------------
# Coefficients
# ---------------------------------------------------------------------------

def constant(value) -> Callable:
    """Coefficient function returning ``value`` everywhere."""
    value = np.asarray(value, dtype=float)
    fn = lambda t, X: value
    fn.constant_value = value
    return fn


@dataclass
class Coefficients:
    """Callables of (t, X) with X the list of coordinate arrays.

    ``a`` returns a (d, d) array (possibly with trailing grid axes), ``b`` a (d,)
    array, ``c`` and ``xi`` scalars or grid arrays.
    """

    a: Callable
    b: Callable
    c: Callable
    xi: Callable
    kappa0: float
    K: float
    time_dependent: bool = False
    name: str = "custom"

    def fields(self, grid: GridSpec, t: float = 0.0, X=None):
        X = grid.coords() if X is None else X
        shape = X[0].shape
        d = grid.d
        A = _as_field(self.a(t, X), (d, d), shape)
        B = _as_field(self.b(t, X), (d,), shape)
        C = _as_field(self.c(t, X), (), shape)
        XI = _as_field(self.xi(t, X), (), shape)
        return A, B, C, XI

    def is_spatially_constant(self, grid: GridSpec, t: float = 0.0) -> bool:
        A, B, C, _ = self.fields(grid, t)
        return all(np.ptp(F.reshape(F.shape[: F.ndim - grid.d] + (-1,)), axis=-1).max(initial=0.0) == 0
                   for F in (A, B, C))


def _as_field(value, head: tuple, shape: tuple) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape == head:
        arr = arr.reshape(head + (1,) * len(shape))
    return np.array(np.broadcast_to(arr, head + shape))


def coefficient_preset(name: str, grid: GridSpec, xi: float = 1.0) -> Coefficients:
    """Named coefficient sets.

    ``heat``/``constant``: a = I, b = c = 0.  ``varying_a``: a = (1 + 0.1 sin(2 pi x1/L)) I.
    ``drift``: a = I, b_i = 0.2 cos(2 pi x_i/L).  ``violating_c``: a = I, c = 10 K.
    ``growth``: a = I, c = 1 (linear mass growth, negative control).
    """
    d, L = grid.d, grid.L
    eye = np.eye(d)
    w = 2 * math.pi / L
    zero_b = constant(np.zeros(d))
    xi_fn = constant(xi)
    if name in ("heat", "constant"):
        return Coefficients(constant(eye), zero_b, constant(0.0), xi_fn, 1.0, max(1.0, abs(xi)), name=name)
    if name == "varying_a":
        a = lambda t, X: np.multiply.outer(eye, 1 + 0.1 * np.sin(w * X[0]))
        K = 1.1 + 0.1 * w + 0.1 * w * w
        return Coefficients(a, zero_b, constant(0.0), xi_fn, 0.9, max(K, 1.1, abs(xi)), name=name)
    if name == "drift":
        b = lambda t, X: np.stack([0.2 * np.cos(w * X[i]) for i in range(d)])
        K = max(1.0 + 0.2 * (1 + w + w * w), abs(xi))
        return Coefficients(constant(eye), b, constant(0.0), xi_fn, 1.0, K, name=name)
    if name == "violating_c":
        K = 1.0
        return Coefficients(constant(eye), zero_b, constant(10.0 * K), xi_fn, 1.0, K, name=name)
    if name == "growth":
        return Coefficients(constant(eye), zero_b, constant(1.0), xi_fn, 1.0, max(1.0, abs(xi)), name=name)
    raise ParameterError(f"unknown coefficient preset {name!r}")


def periodic_derivative(f: np.ndarray, axis: int, dx: float, order: int = 1) -> np.ndarray:
    """Fourth-order centred periodic finite difference of first or second order."""
    r = lambda s: np.roll(f, -s, axis=axis)
    if order == 1:
        return (-r(2) + 8 * r(1) - 8 * r(-1) + r(-2)) / (12 * dx)
    if order == 2:
        return (-r(2) + 16 * r(1) - 30 * f + 16 * r(-1) - r(-2)) / (12 * dx * dx)
    raise ParameterError("order must be 1 or 2")


def _gradient(f: np.ndarray, grid: GridSpec) -> list[np.ndarray]:
    lead = f.ndim - grid.d
    return [periodic_derivative(f, lead + i, grid.dx) for i in range(grid.d)]


def _hessian(f: np.ndarray, grid: GridSpec) -> list[list[np.ndarray]]:
    lead = f.ndim - grid.d
    out = [[None] * grid.d for _ in range(grid.d)]
    for i in range(grid.d):
        out[i][i] = periodic_derivative(f, lead + i, grid.dx, 2)
        for j in range(i + 1, grid.d):
            out[i][j] = out[j][i] = periodic_derivative(
                periodic_derivative(f, lead + i, grid.dx), lead + j, grid.dx)
    return out


def c2_norm(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """sup|f| + max_i sup|D_i f| + max_ij sup|D_ij f| per leading component."""
    lead = f.ndim - grid.d
    axes = tuple(range(lead, f.ndim))
    sup = np.max(np.abs(f), axis=axes)
    g = np.max(np.stack([np.max(np.abs(x), axis=axes) for x in _gradient(f, grid)]), axis=0)
    h = np.max(np.stack([np.max(np.abs(x), axis=axes) for row in _hessian(f, grid) for x in row]), axis=0)
    return sup + g + h


@dataclass
class AssumptionReport:
    passed: bool
    ellipticity_lower_margin: float   # min eig - kappa0
    ellipticity_upper_margin: float   # K - max eig
    c2_margin: float                  # K - (|a|_C2 + |b|_C2 + |c|_C2)
    xi_margin: float                  # K - sup |xi|
    worst_point: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "ellipticity_lower_margin": self.ellipticity_lower_margin,
                "ellipticity_upper_margin": self.ellipticity_upper_margin,
                "c2_margin": self.c2_margin, "xi_margin": self.xi_margin, "worst_point": self.worst_point}


def check_assumptions(coeffs: Coefficients, grid: GridSpec, times: Sequence[float] = (0.0,),
                      raise_on_failure: bool = True) -> AssumptionReport:
    """Ellipticity, C^2 bounds (finite differences) and the bound on xi at all grid points and times."""
    lo_m = hi_m = c2_m = xi_m = math.inf
    worst = {}
    axis = grid.axis()
    for t in times:
        A, B, C, XI = coeffs.fields(grid, t)
        mats = np.moveaxis(A.reshape(grid.d, grid.d, -1), -1, 0)
        eig = np.linalg.eigvalsh(0.5 * (mats + np.swapaxes(mats, 1, 2)))
        lo = eig[:, 0] - coeffs.kappa0
        hi = coeffs.K - eig[:, -1]
        a_c2 = np.max(c2_norm(A, grid))
        b_c2 = np.max(c2_norm(B, grid))
        c_c2 = float(c2_norm(C, grid))
        c2 = coeffs.K - (a_c2 + b_c2 + c_c2)
        xim = coeffs.K - float(np.max(np.abs(XI)))
        for label, arr in (("ellipticity_lower", lo), ("ellipticity_upper", hi)):
            k = int(np.argmin(arr))
            if arr[k] < 0 and label not in worst:
                idx = np.unravel_index(k, grid.shape)
                worst[label] = {"t": t, "x": [float(axis[i]) for i in idx], "margin": float(arr[k])}
        if c2 < 0 and "c2" not in worst:
            worst["c2"] = {"t": t, "a": float(a_c2), "b": float(b_c2), "c": c_c2, "margin": c2}
        if xim < 0 and "xi" not in worst:
            worst["xi"] = {"t": t, "margin": xim}
        lo_m, hi_m = min(lo_m, float(lo.min())), min(hi_m, float(hi.min()))
        c2_m, xi_m = min(c2_m, c2), min(xi_m, xim)
    passed = lo_m >= 0 and hi_m >= 0 and c2_m >= 0 and xi_m >= 0
    report = AssumptionReport(passed, lo_m, hi_m, c2_m, xi_m, worst)
    if not passed and raise_on_failure:
        first = next(iter(worst))
        raise AssumptionViolation(f"coefficient assumption fails ({first}): {worst[first]}", point=worst[first])
    return report


# ---------------------------------------------------------------------------
# Diffusion coefficient
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionSpec:
    """``truncated_power``: xi |(-m) v u ^ m|^{1+lambda}; ``lipschitz_h``: xi h(u)."""

    lam: float = 0.0
    m: float = 1e6
    form: str = "truncated_power"
    h: Callable | None = None
    h_lipschitz: float | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ParameterError("lambda must be nonnegative")
        if not self.m > 0:
            raise ParameterError("truncation level must be positive")
        if self.form not in ("truncated_power", "lipschitz_h"):
            raise ParameterError(f"unknown diffusion form {self.form!r}")
        if self.form == "lipschitz_h" and (self.h is None or self.h_lipschitz is None):
            raise ParameterError("lipschitz_h needs h and its Lipschitz constant")

    def sigma(self, u: np.ndarray, xi) -> np.ndarray:
        if self.form == "lipschitz_h":
            return xi * self.h(u)
        v = np.abs(np.clip(u, -self.m, self.m))
        return xi * (v if self.lam == 0 else v ** (1 + self.lam))

    def lipschitz_constant(self, xi_sup: float) -> float:
        if self.form == "lipschitz_h":
            return self.h_lipschitz * xi_sup
        if math.isinf(self.m):
            return math.inf if self.lam > 0 else xi_sup
        return (1 + self.lam) * (2 * self.m) ** self.lam * xi_sup


# ---------------------------------------------------------------------------
# Linear operator and stepping
# ---------------------------------------------------------------------------

def operator_symbol(grid: GridSpec, A: np.ndarray, B: np.ndarray, C: float) -> np.ndarray:
    """Symbol of the constant-coefficient centred-difference operator (half spectrum)."""
    theta = [k * grid.dx for k in grid.wavenumbers(half=True)]
    h = grid.dx
    sym = np.full(theta[0].shape, complex(C))
    for i in range(grid.d):
        sym += A[i, i] * (-4 * np.sin(theta[i] / 2) ** 2 / h ** 2)
        sym += 1j * B[i] * np.sin(theta[i]) / h
        for j in range(grid.d):
            if j != i:
                sym += A[i, j] * (-np.sin(theta[i]) * np.sin(theta[j]) / h ** 2)
    return sym


def assemble_operator(grid: GridSpec, A, B, C, form: str = "nondivergence", a_half=None) -> sparse.csr_matrix:
    """Sparse matrix of L on the periodic grid (flattened row-major)."""
    d, h = grid.d, grid.dx
    N = grid.n ** d
    idx = np.arange(N).reshape(grid.shape)
    rows, cols, vals = [], [], []

    def add(shift_idx, coef):
        rows.append(idx.ravel())
        cols.append(shift_idx.ravel())
        vals.append(np.broadcast_to(coef, grid.shape).ravel())

    add(idx, C)
    if form == "divergence":
        if d != 1 or a_half is None:
            raise ParameterError("variable-coefficient divergence form is implemented for d = 1")
        ap = a_half                       # a at x_j + h/2
        am = np.roll(a_half, 1)           # a at x_j - h/2
        add(np.roll(idx, -1), ap / h ** 2)
        add(np.roll(idx, 1), am / h ** 2)
        add(idx, -(ap + am) / h ** 2)
        add(np.roll(idx, -1), B[0] / (2 * h))
        add(np.roll(idx, 1), -B[0] / (2 * h))
    else:
        for i in range(d):
            ip, im = np.roll(idx, -1, axis=i), np.roll(idx, 1, axis=i)
            add(ip, A[i, i] / h ** 2 + B[i] / (2 * h))
            add(im, A[i, i] / h ** 2 - B[i] / (2 * h))
            add(idx, -2 * A[i, i] / h ** 2)
            for j in range(i + 1, d):
                coef = (A[i, j] + A[j, i]) / (4 * h ** 2)
                for si, sj, sgn in ((-1, -1, 1), (-1, 1, -1), (1, -1, -1), (1, 1, 1)):
                    add(np.roll(np.roll(idx, si, axis=i), sj, axis=j), sgn * coef)
    return sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(N, N)).tocsr()


class DriftSolver:
    """Solves (I - dt L_t) v = rhs; FFT when coefficients are constant, sparse LU otherwise."""

    def __init__(self, coeffs: Coefficients, grid: GridSpec, form: str = "nondivergence"):
        self.coeffs, self.grid, self.form = coeffs, grid, form
        self.constant = (not coeffs.time_dependent) and coeffs.is_spatially_constant(grid)
        self._cache = {}

    def _key(self, t, dt):
        return (dt,) if not self.coeffs.time_dependent else (t, dt)

    def operator(self, t: float) -> sparse.csr_matrix:
        A, B, C, _ = self.coeffs.fields(self.grid, t)
        a_half = None
        if self.form == "divergence" and self.grid.d == 1:
            X = [self.grid.coords()[0] + self.grid.dx / 2]
            a_half = _as_field(self.coeffs.a(t, X), (1, 1), self.grid.shape)[0, 0]
        return assemble_operator(self.grid, A, B, C, self.form, a_half)

    def solve(self, rhs: np.ndarray, t: float, dt: float) -> np.ndarray:
        key = self._key(t, dt)
        if self.constant:
            if key not in self._cache:
                A, B, C, _ = self.coeffs.fields(self.grid, t)
                first = (0,) * self.grid.d
                sym = operator_symbol(self.grid, A[(slice(None), slice(None)) + first],
                                      B[(slice(None),) + first], float(C[first]))
                self._cache = {key: 1.0 / (1.0 - dt * sym)}
            return np.fft.irfftn(self._cache[key] * np.fft.rfftn(rhs), s=self.grid.shape,
                                 axes=tuple(range(self.grid.d)))
        if key not in self._cache:
            M = (sparse.identity(self.grid.n ** self.grid.d, format="csr") - dt * self.operator(t)).tocsc()
            self._cache = {key: (M, splinalg.splu(M))}
        M, lu = self._cache[key]
        b = rhs.ravel()
        v = lu.solve(b)
        res = np.linalg.norm(M @ v - b) / max(np.linalg.norm(b), 1e-300)
        if not res <= RESIDUAL_TOL:
            raise NumericError(f"linear solve residual {res:.3g} above {RESIDUAL_TOL}", achieved=res)
        return v.reshape(self.grid.shape)


@dataclass
class SimulationState:
    u: np.ndarray
    t: float = 0.0
    step_count: int = 0
    blown_up: bool = False


def step(state: SimulationState, coeffs: Coefficients, diff: DiffusionSpec, noise: NoiseIncrement,
         dt: float, solver: DriftSolver | None = None, grid: GridSpec | None = None) -> SimulationState:
    if not dt > 0:
        raise ParameterError("dt must be positive")
    if abs(noise.dt - dt) > 1e-12 * dt:
        raise ParameterError("noise increment was drawn for a different dt")
    if noise.values.shape != state.u.shape:
        raise ParameterError("noise and state grids differ")
    if solver is None:
        if grid is None:
            raise ParameterError("pass a DriftSolver or the grid")
        solver = DriftSolver(coeffs, grid)
    XI = coeffs.fields(solver.grid, state.t)[3]
    # overflow is a monitored outcome (blow-up flag), not an error
    with np.errstate(over="ignore", invalid="ignore"):
        rhs = state.u + diff.sigma(state.u, XI) * noise.values
        u_new = solver.solve(rhs, state.t, dt)
    blown = not np.all(np.isfinite(u_new))
    return SimulationState(u_new, state.t + dt, state.step_count + 1, blown)


# ---------------------------------------------------------------------------
# Monitors and paths
# ---------------------------------------------------------------------------

def discrete_bessel_norm(u: np.ndarray, gamma: float, p: float, grid: GridSpec) -> float:
    """Grid L_p norm of (1 - Delta)^{gamma/2} u with the multiplier on the dual lattice."""
    if gamma == 0:
        v = u
    else:
        k2 = sum(k * k for k in grid.wavenumbers(half=True))
        v = np.fft.irfftn((1 + k2) ** (gamma / 2) * np.fft.rfftn(u), s=grid.shape, axes=tuple(range(grid.d)))
    return float((grid.cell_volume * np.sum(np.abs(v) ** p)) ** (1 / p))


@dataclass
class MonitorConfig:
    thresholds: Sequence[float] = ()
    record_every: int = 1
    snapshot_times: Sequence[float] = ()
    bessel: tuple | None = None              # (gamma, p)
    probe_points: Sequence[int] | None = None   # flat grid indices for time series
    probe_every: int = 1
    substeps: int = 1                         # noise sub-draws per step (matched refinement)


@dataclass
class TrajectoryRecord:
    times: list = field(default_factory=list)
    sup_norm: list = field(default_factory=list)
    l1_mass: list = field(default_factory=list)
    min_value: list = field(default_factory=list)
    bessel_norm: list | None = None
    tau_hits: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict)
    probe_times: list = field(default_factory=list)
    probes: list = field(default_factory=list)
    blown_up: bool = False
    failed: str = ""
    seed: int = 0
    stream: int = 0
    config_key: str = ""
    steps: int = 0

    def append(self, t, u, grid: GridSpec, bessel):
        self.times.append(float(t))
        self.sup_norm.append(float(np.max(np.abs(u))))
        self.l1_mass.append(float(grid.cell_volume * np.sum(np.abs(u))))
        self.min_value.append(float(np.min(u)))
        if bessel is not None:
            self.bessel_norm.append(discrete_bessel_norm(u, bessel[0], bessel[1], grid))

    def rows(self):
        for i, t in enumerate(self.times):
            yield (t, self.sup_norm[i], self.l1_mass[i], self.min_value[i],
                   self.bessel_norm[i] if self.bessel_norm is not None else None)

    def summary(self) -> dict:
        return {"tau_hits": [[R, tau] for R, tau in sorted(self.tau_hits.items())],
                "blown_up": self.blown_up, "failed": self.failed, "seed": self.seed,
                "stream": self.stream, "steps": self.steps, "config_key": self.config_key}


def run_path(u0: np.ndarray, coeffs: Coefficients, diff: DiffusionSpec, sampler: NoiseSampler,
             dt: float, T: float, monitors: MonitorConfig | None = None, form: str = "nondivergence",
             config_key: str = "", solver: DriftSolver | None = None) -> TrajectoryRecord:
    grid = sampler.grid
    monitors = monitors or MonitorConfig()
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != grid.shape or not np.all(np.isfinite(u0)):
        raise ParameterError("u0 must be a finite field on the sampler grid")
    if not (0 < dt <= T):
        raise ParameterError("need 0 < dt <= T")
    solver = solver or DriftSolver(coeffs, grid, form)
    nsteps = int(round(T / dt))
    rec = TrajectoryRecord(bessel_norm=[] if monitors.bessel else None, seed=sampler.seed,
                           stream=sampler.stream, config_key=config_key)
    rec.tau_hits = {float(R): None for R in monitors.thresholds}
    snap_steps = {int(round(s / dt)): s for s in monitors.snapshot_times}
    probes = None if monitors.probe_points is None else np.asarray(monitors.probe_points)
    state = SimulationState(u0.copy(), 0.0, 0)

    def observe(state):
        k = state.step_count
        if k % monitors.record_every == 0 or k == nsteps:
            rec.append(state.t, state.u, grid, monitors.bessel)
        if probes is not None and k % monitors.probe_every == 0:
            rec.probe_times.append(state.t)
            rec.probes.append(state.u.ravel()[probes].copy())
        if k in snap_steps:
            rec.snapshots[snap_steps[k]] = state.u.copy()
        if rec.tau_hits:
            sup = float(np.max(np.abs(state.u)))
            for R, tau in rec.tau_hits.items():
                if tau is None and sup >= R:
                    rec.tau_hits[R] = state.t

    observe(state)
    try:
        for _ in range(nsteps):
            w = sampler.sample(dt, monitors.substeps)
            state = step(state, coeffs, diff, w, dt, solver)
            if state.blown_up:
                rec.blown_up = True
                rec.failed = f"non-finite values at step {state.step_count}"
                break
            observe(state)
    except NumericError as exc:
        rec.failed = str(exc)
    rec.steps = state.step_count
    return rec


def lyapunov_check(coeffs: Coefficients, k: float, grid: GridSpec, t: float = 0.0,
                   return_field: bool = False):
    """Max over the grid of

        a^{ij} psi_ij + (2 a^{ij}_{x^j} - b^i) psi_i + (a^{ij}_{x^i x^j} - b^i_{x^i} + c - 4K) psi

    for psi = 1/cosh(|x|/k); coefficient derivatives by fourth-order periodic differences.
    """
    X = grid.coords()
    A, B, C, _ = coeffs.fields(grid, t, X)
    d = grid.d
    r = np.sqrt(sum(x * x for x in X))
    psi = 1.0 / np.cosh(r / k)
    th = np.tanh(r / k)
    dphi = -psi * th / k
    d2phi = psi * (th * th - psi * psi) / k ** 2
    safe = np.where(r > 0, r, 1.0)
    unit = [np.where(r > 0, x / safe, 0.0) for x in X]
    dphi_over_r = np.where(r > 0, dphi / safe, -1.0 / k ** 2)
    grad = [dphi * e for e in unit]
    hess = [[(d2phi - dphi_over_r) * unit[i] * unit[j] + (dphi_over_r if i == j else 0.0)
             for j in range(d)] for i in range(d)]
    at_origin = r == 0
    for i in range(d):
        hess[i][i] = np.where(at_origin, -1.0 / k ** 2, hess[i][i])
    res = (C - 4 * coeffs.K) * psi
    for i in range(d):
        res = res - B[i] * grad[i] - periodic_derivative(B[i], i, grid.dx) * psi
        for j in range(d):
            res = res + A[i, j] * hess[i][j] + 2 * periodic_derivative(A[i, j], j, grid.dx) * grad[i]
            if i == j:
                aij = periodic_derivative(A[i, j], i, grid.dx, 2)
            else:
                aij = periodic_derivative(periodic_derivative(A[i, j], i, grid.dx), j, grid.dx)
            res = res + aij * psi
    worst = float(np.max(res))
    return (worst, res) if return_field else worst


def mass_martingale_stat(records: Sequence[TrajectoryRecord], t: float) -> tuple[float, float]:
    """Mean of l1_mass(t) - l1_mass(0) across paths and its standard error."""
    if len(records) < 2:
        raise StatisticsError("need at least two paths")
    keys = {r.config_key for r in records}
    if len(keys) > 1:
        raise StatisticsError("records come from different configurations")
    drifts = []
    for rec in records:
        times = np.asarray(rec.times)
        i = int(np.argmin(np.abs(times - t)))
        if abs(times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise StatisticsError(f"time {t} is not on the record grid")
        drifts.append(rec.l1_mass[i] - rec.l1_mass[0])
    drifts = np.asarray(drifts)
    return float(drifts.mean()), float(drifts.std(ddof=1) / math.sqrt(len(drifts)))


def config_fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def bump(grid: GridSpec, width: float = None, height: float = 1.0) -> np.ndarray:
    """Nonnegative smooth bump height * cos^2 on |x| < width (width defaults to L/4)."""
    width = grid.L / 4 if width is None else width
    r = grid.radius()
    return np.where(r < width, height * np.cos(0.5 * math.pi * r / width) ** 2, 0.0)
