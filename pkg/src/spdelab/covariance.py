"""Covariance kernels, spectral measures and Bessel potential kernels.

Fourier convention: F(f)(xi) = (2 pi)^{-d/2} int e^{-i xi.x} f(x) dx.  Under it the
Bessel potential kernel satisfies F(R_gamma)(xi) = (2 pi)^{-d/2} (1 + |xi|^2)^{-gamma/2},
i.e. int R_gamma = 1, which fixes the normalising constant

    c(gamma, d) = 1 / ((4 pi)^{d/2} Gamma(gamma / 2)).
"""
from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, interpolate, optimize, special

from .errors import InvariantViolation, NumericError, ParameterError


class _Marker:
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return self.name

    def __reduce__(self):
        return self.name


#: Returned (not raised) where a kernel or density has a pole.
SINGULAR = _Marker("SINGULAR")

#: I-constant of :func:`estimate_constants` when the finiteness test fails.
INFINITE = math.inf

QUAD_EPSABS = 1e-8
QUAD_EPSREL = 1e-6

KINDS = ("white", "riesz", "gaussian")


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere S^{d-1} (equals 2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


@dataclass(frozen=True)
class CovarianceModel:
    """Spatial covariance f of the noise.

    ``kind`` is one of ``"white"`` (f = delta_0, d = 1 only), ``"riesz"``
    (f = |x|^{-alpha}, 0 < alpha < d) or ``"gaussian"`` (f = exp(-c|x|^2)).
    """

    kind: str
    d: int = 1
    alpha: float | None = None
    c: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown covariance kind {self.kind!r}")
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise ParameterError(f"dimension must be a positive integer, got {self.d!r}")
        if self.kind == "white" and self.d != 1:
            raise ParameterError("white noise covariance requires d = 1")
        if self.kind == "riesz":
            if self.alpha is None or not (0.0 < self.alpha < self.d):
                raise ParameterError(f"Riesz kernel requires 0 < alpha < d, got alpha={self.alpha}")
        if self.kind == "gaussian":
            if self.c is None or not (self.c > 0.0 and math.isfinite(self.c)):
                raise ParameterError(f"Gaussian kernel requires c > 0, got c={self.c}")

    @classmethod
    def white(cls) -> "CovarianceModel":
        return cls("white", 1)

    @classmethod
    def riesz(cls, alpha: float, d: int = 1) -> "CovarianceModel":
        return cls("riesz", d, alpha=float(alpha))

    @classmethod
    def gaussian(cls, c: float = 1.0, d: int = 1) -> "CovarianceModel":
        return cls("gaussian", d, c=float(c))

    @property
    def bounded_continuous(self) -> bool:
        """True when f is a bounded continuous function (only the Gaussian)."""
        return self.kind == "gaussian"

    @property
    def default_tempering(self) -> float:
        if self.kind == "riesz":
            return self.d - self.alpha + 0.5
        return 0.0

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "d": int(self.d)}
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if self.c is not None:
            out["c"] = self.c
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CovarianceModel":
        kind = data.get("kind")
        aliases = {"white_noise": "white", "gauss": "gaussian"}
        kind = aliases.get(kind, kind)
        d = int(data.get("d", 1))
        if kind == "riesz":
            return cls.riesz(data.get("alpha"), d)
        if kind == "gaussian":
            return cls.gaussian(data.get("c", 1.0), d)
        return cls(kind, d)


def _norm(x, d: int) -> float:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.size != d:
        raise ParameterError(f"point has {arr.size} coordinates, expected {d}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError("point must be finite")
    return float(np.sqrt(np.sum(arr * arr)))


def eval_covariance(model: CovarianceModel, x):
    """Evaluate f(x); ``SINGULAR`` at the Riesz pole and for white noise."""
    r = _norm(x, model.d)
    if model.kind == "white":
        return SINGULAR
    if model.kind == "riesz":
        if r == 0.0:
            return SINGULAR
        return r ** (-model.alpha)
    return math.exp(-model.c * r * r)


def covariance_radial(model: CovarianceModel, r) -> np.ndarray:
    """Vectorised f as a function of |x|; poles are returned as ``inf``."""
    r = np.asarray(r, dtype=float)
    if model.kind == "gaussian":
        return np.exp(-model.c * r * r)
    if model.kind == "riesz":
        with np.errstate(divide="ignore"):
            return np.where(r > 0, np.power(np.where(r > 0, r, 1.0), -model.alpha), np.inf)
    return np.where(r == 0, np.inf, 0.0)


def riesz_dual_constant(alpha: float, d: int) -> float:
    """Constant C with F(|x|^{-alpha}) = C |xi|^{alpha - d}."""
    return 2.0 ** (d / 2 - alpha) * math.gamma((d - alpha) / 2) / math.gamma(alpha / 2)


def spectral_density_radial(model: CovarianceModel, k) -> np.ndarray:
    """Vectorised density of nu as a function of |xi| (``inf`` at the Riesz pole)."""
    k = np.asarray(k, dtype=float)
    d = model.d
    if model.kind == "white":
        return np.full(k.shape, (2 * math.pi) ** (-0.5))
    if model.kind == "gaussian":
        c = model.c
        return (2 * c) ** (-d / 2) * np.exp(-k * k / (4 * c))
    const = riesz_dual_constant(model.alpha, d)
    with np.errstate(divide="ignore"):
        safe = np.where(k > 0, k, 1.0)
        return np.where(k > 0, const * np.power(safe, model.alpha - d), np.inf)


def spectral_density(model: CovarianceModel, xi):
    """Density of the measure nu corresponding to F(f), evaluated at ``xi``."""
    k = _norm(xi, model.d)
    if model.kind == "riesz" and k == 0.0:
        return SINGULAR
    return float(spectral_density_radial(model, k))


@dataclass(frozen=True)
class SpectralMeasure:
    """The pair (mu, nu) attached to a covariance, plus a tempering exponent.

    ``mu_density`` is None when mu is the point mass ``point_mass * delta_0``.
    Radial callables take |x| (resp. |xi|).
    """

    model: CovarianceModel
    density: Callable
    mu_density: Callable | None
    point_mass: float
    tempering_exponent: float

    @property
    def d(self) -> int:
        return self.model.d

    def mu_local_exponent(self) -> float:
        """Exponent e with mu(dx) ~ |x|^e dx near 0 (0 for bounded densities)."""
        if self.model.kind == "riesz":
            return -self.model.alpha
        return 0.0

    def tempered_integral(self) -> float:
        """A = int (1+|x|^2)^{-k/2} mu(dx); raises if the tail diverges."""
        k = self.tempering_exponent
        d = self.d
        if self.mu_density is None:
            return float(self.point_mass)
        if self.model.kind == "riesz" and not (k + self.model.alpha > d):
            raise InvariantViolation(
                f"tempering exponent k={k} too small: need k > d - alpha = {d - self.model.alpha}"
            )
        area = sphere_area(d)
        weight = lambda rho: rho ** (d - 1) * (1 + rho * rho) ** (-k / 2) * float(self.mu_density(rho))
        near = _quad_checked(weight, 0.0, 1.0)
        far = _quad_checked(weight, 1.0, math.inf)
        value = area * (near + far)
        if not math.isfinite(value):
            raise InvariantViolation("tempered integral diverges for the stored exponent")
        return value


def spectral_measure(model: CovarianceModel, tempering_exponent: float | None = None) -> SpectralMeasure:
    k = model.default_tempering if tempering_exponent is None else float(tempering_exponent)
    if k < 0:
        raise ParameterError("tempering exponent must be nonnegative")
    dens = functools.partial(spectral_density_radial, model)
    if model.kind == "white":
        return SpectralMeasure(model, dens, None, 1.0, k)
    return SpectralMeasure(model, dens, functools.partial(covariance_radial, model), 0.0, k)


def _quad_checked(fun, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, **kw):
    val, err = integrate.quad(fun, a, b, epsabs=epsabs, epsrel=epsrel, limit=200, **kw)
    if not math.isfinite(val) or err > 10 * max(epsabs, epsrel * abs(val)):
        raise NumericError(f"quadrature on [{a}, {b}] did not converge (error estimate {err:.3g})", achieved=err)
    return val


# ---------------------------------------------------------------------------
# Bessel potential kernel
# ---------------------------------------------------------------------------

def bessel_constant(gamma: float, d: int) -> float:
    return 1.0 / ((4 * math.pi) ** (d / 2) * math.gamma(gamma / 2))


def _bessel_radial(gamma: float, d: int, r: float, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL) -> float:
    # With t = delta/|x|^2 and delta = e^u the integral becomes
    #   c int exp(-e^u - |x|^2 e^{-u}/4 + nu u) du,  nu = (gamma - d)/2,
    # which is smooth with double-exponential tails. Integrate around the peak,
    # normalised so the tolerances act on an O(1) integral.
    nu = (gamma - d) / 2
    q = r * r / 4

    def logf(u):
        return -math.exp(u) - q * math.exp(-u) + nu * u

    root = math.sqrt(nu * nu + r * r)
    # stable form of (nu + root)/2 when nu < 0 and r is small
    peak = math.log((nu + root) / 2) if nu >= 0 else math.log(r * r / (2 * (root - nu)))
    top = logf(peak)
    drop = lambda u: logf(u) - top + 60.0
    lo, hi = peak - 1.0, peak + 1.0
    while drop(lo) > 0:
        lo -= 2 * (peak - lo)
    while drop(hi) > 0:
        hi += 2 * (hi - peak)
    lo = optimize.brentq(drop, lo, peak)
    hi = optimize.brentq(drop, peak, hi)
    val, err = integrate.quad(lambda u: math.exp(logf(u) - top), lo, hi,
                              epsabs=epsabs, epsrel=epsrel, limit=200)
    if err > max(epsabs, epsrel * abs(val)):
        raise NumericError(f"Bessel kernel quadrature failed at |x|={r} (error {err:.3g})", achieved=err)
    return bessel_constant(gamma, d) * math.exp(top) * val


def bessel_kernel(gamma: float, d: int, x):
    """R_gamma(x) by adaptive quadrature of its integral representation.

    Returns ``SINGULAR`` at x = 0 when gamma <= d.
    """
    if not (gamma > 0):
        raise ParameterError(f"gamma must be positive, got {gamma}")
    r = _norm(x, d)
    if r == 0.0 and gamma <= d:
        return SINGULAR
    return _bessel_radial(gamma, d, r)


def bessel_kernel_values(gamma: float, d: int, radii) -> np.ndarray:
    radii = np.asarray(radii, dtype=float)
    out = np.empty(radii.shape)
    for idx, r in np.ndenumerate(radii):
        out[idx] = np.inf if (r == 0 and gamma <= d) else _bessel_radial(gamma, d, float(r))
    return out


def asymptotic_class(gamma: float, d: int) -> str:
    """Near-origin behaviour of R_gamma: algebraic blow-up, logarithmic, or bounded."""
    if gamma < d:
        return "algebraic"
    if gamma == d:
        return "logarithmic"
    return "bounded"


class KernelInterpolant:
    """Vectorised R_gamma(|x|)**power built from quadrature nodes.

    log R + |x| is splined against log|x| (the remainder is smooth); below the
    first node the kernel is continued by its local power law.
    """

    R_MIN = 1e-8
    R_MAX = 80.0

    def __init__(self, gamma: float, d: int, power: float = 1.0, per_decade: int = 30):
        self.gamma, self.d, self.power = float(gamma), int(d), float(power)
        nodes = np.logspace(math.log10(self.R_MIN), math.log10(self.R_MAX),
                            int(per_decade * math.log10(self.R_MAX / self.R_MIN)) + 1)
        vals = bessel_kernel_values(gamma, d, nodes)
        self._s = np.log(nodes)
        self._y = np.log(vals) + nodes
        self._spline = interpolate.CubicSpline(self._s, self._y)
        self._slope0 = float(self._spline(self._s[0], 1))
        self.value_at_zero = _bessel_radial(gamma, d, 0.0) if gamma > d else math.inf

    def log_kernel(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        s = np.log(np.maximum(r, 1e-300))
        y = np.where(s < self._s[0],
                     self._y[0] + self._slope0 * (s - self._s[0]) if self.gamma <= self.d else self._y[0],
                     self._spline(np.clip(s, self._s[0], self._s[-1])))
        return y - r

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = np.exp(self.power * self.log_kernel(r))
        out = np.where(r > self.R_MAX, 0.0, out)
        if self.gamma > self.d:
            out = np.where(r == 0, self.value_at_zero ** self.power, out)
        else:
            out = np.where(r == 0, np.inf, out)
        return out


@functools.lru_cache(maxsize=32)
def kernel_interpolant(gamma: float, d: int, power: float = 1.0) -> KernelInterpolant:
    return KernelInterpolant(gamma, d, power)


def radial_grid(r_min: float = 1e-3, r_max: float = 10.0, per_decade: int = 12,
                include_zero: bool = False) -> np.ndarray:
    """Geometric radial grid, ``per_decade`` points per decade, both ends included."""
    n = int(round(per_decade * math.log10(r_max / r_min))) + 1
    radii = np.logspace(math.log10(r_min), math.log10(r_max), n)
    return np.concatenate([[0.0], radii]) if include_zero else radii


@dataclass
class KernelTable:
    """Radial table of a kernel (``power`` of R_gamma, or its self-convolution)."""

    gamma: float
    d: int
    radii: np.ndarray
    values: np.ndarray
    quadrature_tolerance: float = QUAD_EPSREL
    power: float = 1.0
    kind: str = "kernel"
    meta: dict = field(default_factory=dict)

    @property
    def asymptotic_class(self) -> str:
        return asymptotic_class(self.gamma, self.d)

    def positive(self) -> bool:
        v = self.values[np.isfinite(self.values)]
        return bool(np.all(v > 0))

    def is_nonincreasing(self, rtol: float = 1e-9) -> bool:
        v = self.values
        return bool(np.all(np.diff(v) <= rtol * np.abs(v[:-1])))

    def sup(self) -> float:
        return float(np.max(self.values))

    def value_at(self, r: float) -> float:
        """Linear interpolation on the table (exact at tabulated radii)."""
        return float(np.interp(r, self.radii, self.values))

    def rows(self):
        return list(zip(self.radii.tolist(), self.values.tolist()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["radius", "value"])
            for r, v in self.rows():
                writer.writerow([repr(float(r)), repr(float(v))])


def kernel_table(gamma: float, d: int, radii=None) -> KernelTable:
    """Tabulate R_gamma on a radial grid spanning [1e-3, 10] by default."""
    radii = radial_grid() if radii is None else np.asarray(radii, dtype=float)
    values = bessel_kernel_values(gamma, d, radii)
    return KernelTable(gamma, d, radii, values, QUAD_EPSREL, 1.0, "kernel")


def cell_masses_1d(gamma: float, spacing: float, n: int, power: float = 1.0,
                   exact_cells: int = 16) -> np.ndarray:
    """Masses of R_gamma**power on the cells of a periodic 1-D grid centred on nodes.

    Returns an array of length ``n`` in FFT layout (node 0 at the origin). Cells
    within ``exact_cells`` of the origin are integrated; the rest use midpoint values.
    """
    g = kernel_interpolant(float(gamma), 1, float(power))
    half = n // 2
    x = np.arange(half + 1) * spacing
    mass = np.empty(half + 1)
    h = spacing / 2
    mass[exact_cells + 1:] = g(x[exact_cells + 1:]) * spacing
    fun = lambda t: float(g(t))
    a = envelope_exponent(gamma, power, 1)
    if a > 0:
        reg = lambda t: float(g(max(t, 1e-12))) * max(t, 1e-12) ** a
        mass[0] = 2 * integrate.quad(reg, 0.0, h, weight="alg", wvar=(-a, 0.0), epsabs=1e-14, epsrel=1e-10)[0]
    else:
        mass[0] = 2 * integrate.quad(fun, 0.0, h, limit=200, epsabs=1e-14, epsrel=1e-10)[0]
    for j in range(1, exact_cells + 1):
        mass[j] = integrate.quad(fun, x[j] - h, x[j] + h, epsabs=1e-14, epsrel=1e-10)[0]
    return np.concatenate([mass, mass[half - 1:0:-1]])


def bessel_fourier_check(gamma: float, n: int = 4096, L: float = 40.0, xi_max: float = 25.0) -> dict:
    """Compare the DFT of the sampled kernel with (2 pi)^{-1/2}(1+xi^2)^{-gamma/2} in d = 1."""
    spacing = L / n
    masses = cell_masses_1d(gamma, spacing, n, 1.0)
    xi = 2 * math.pi * np.fft.rfftfreq(n, d=spacing)
    transform = np.fft.rfft(masses).real / math.sqrt(2 * math.pi)
    expected = (1 + xi * xi) ** (-gamma / 2) / math.sqrt(2 * math.pi)
    sel = xi <= xi_max
    rel = np.abs(transform[sel] - expected[sel]) / expected[sel]
    return {"gamma": gamma, "n": n, "L": L, "xi": xi[sel], "computed": transform[sel],
            "expected": expected[sel], "max_rel_error": float(rel.max())}


# ---------------------------------------------------------------------------
# Self-convolution of R_gamma**r
# ---------------------------------------------------------------------------

def envelope_exponent(gamma: float, r: float, d: int) -> float:
    """a with R_gamma**r <= N |x|^{-a} near 0 (0 when gamma >= d)."""
    return r * (d - gamma) if gamma < d else 0.0


def kernel_power_norm(gamma: float, d: int, power: float) -> float:
    """|| R_gamma ||_{L_power}^{power} = int R_gamma(x)**power dx."""
    a = envelope_exponent(gamma, power, d)
    if a >= d:
        return math.inf
    area = sphere_area(d)
    kw = dict(epsabs=1e-13, epsrel=1e-10)
    if gamma < d:
        # R^power ~ rho^{-a}: integrate the regular part against rho^{d-1-a}
        near = lambda rho: _bessel_radial(gamma, d, max(rho, 1e-12)) ** power * max(rho, 1e-12) ** a
        v1 = integrate.quad(near, 0.0, 1.0, weight="alg", wvar=(d - 1 - a, 0.0), **kw)[0]
    else:
        v1 = integrate.quad(lambda rho: rho ** (d - 1) * _bessel_radial(gamma, d, rho) ** power
                            if rho > 0 else (0.0 if d > 1 else _bessel_radial(gamma, d, 0.0) ** power),
                            0.0, 1.0, limit=200, **kw)[0]
    v2 = integrate.quad(lambda rho: rho ** (d - 1) * _bessel_radial(gamma, d, rho) ** power,
                        1.0, 1.0 + 60.0 / power, limit=200, **kw)[0]
    return area * (v1 + v2)


def _check_integrable(gamma: float, r: float, d: int):
    if not (gamma > 0 and r >= 1):
        raise ParameterError(f"need gamma > 0 and r >= 1, got gamma={gamma}, r={r}")
    if not (r * (gamma - d) > -d):
        raise ParameterError(
            f"R_gamma**r is not integrable: r(gamma - d) = {r * (gamma - d):.4g} <= -d = {-d}")


def self_convolution_fft_1d(gamma: float, r: float, spacing: float = 2.5e-4, n: int = 2 ** 18):
    """Discrete periodic convolution of cell-averaged R_gamma**r in d = 1.

    Returns (nodes, values) for nodes 0, spacing, ..., spacing * n/2.
    """
    _check_integrable(gamma, r, 1)
    masses = cell_masses_1d(gamma, spacing, n, r)
    spec = np.fft.rfft(masses)
    conv = np.fft.irfft(spec * spec, n) / spacing
    half = n // 2
    return np.arange(half + 1) * spacing, conv[: half + 1]


def self_convolution_direct(gamma: float, r: float, d: int, s: float, n_angle: int = 64) -> float:
    """(R^r * R^r)(x) at |x| = s by direct quadrature.

    Uses the symmetry y <-> x - y to integrate only over {|y| < |x - y|}, where the
    second factor is bounded; the first factor's pole is handled in polar
    coordinates about the origin.
    """
    _check_integrable(gamma, r, d)
    g = kernel_interpolant(float(gamma), int(d), float(r))
    a = envelope_exponent(gamma, r, d)
    if s == 0:
        return kernel_power_norm(gamma, d, 2 * r)

    if d == 1:
        def shell(rho):
            # S^0 = {+1, -1}; only the point with rho*cos(theta) < s/2 survives for rho > s/2
            val = float(g(abs(s + rho)))
            if rho < s / 2:
                val += float(g(abs(s - rho)))
            return val
    else:
        nodes, weights = np.polynomial.legendre.leggauss(n_angle)
        sub = sphere_area(d - 1)

        def shell(rho):
            theta0 = math.acos(min(1.0, s / (2 * rho))) if rho > 0 else 0.0
            th = theta0 + (math.pi - theta0) * (nodes + 1) / 2
            dist = np.sqrt(np.maximum(s * s + rho * rho - 2 * s * rho * np.cos(th), 0.0))
            w = weights * (math.pi - theta0) / 2 * np.sin(th) ** (d - 2)
            return sub * float(np.dot(w, g(dist)))

    kw = dict(epsabs=0.0, epsrel=1e-9, limit=400)
    if a > 0:
        # g(rho) rho^{d-1} ~ rho^{d-1-a}: put the singular power into the weight
        reg = lambda rho: float(g(max(rho, 1e-12))) * max(rho, 1e-12) ** a * shell(rho)
        v1 = integrate.quad(reg, 0.0, s / 2, weight="alg", wvar=(d - 1 - a, 0.0), **kw)[0]
    else:
        v1 = integrate.quad(lambda rho: rho ** (d - 1) * float(g(rho)) * shell(rho), 0.0, s / 2, **kw)[0]
    outer = lambda rho: rho ** (d - 1) * float(g(rho)) * shell(rho)
    upper = s / 2 + 50.0 / r
    v2 = integrate.quad(outer, s / 2, max(s, s / 2 + 1.0), **kw)[0]
    v3 = integrate.quad(outer, max(s, s / 2 + 1.0), upper, **kw)[0]
    return 2.0 * (v1 + v2 + v3)


def kernel_self_convolution(gamma: float, r: float, d: int, grid=None) -> KernelTable:
    """Tabulate (R_gamma^r * R_gamma^r) on a radial grid.

    d = 1 uses an FFT discrete convolution of cell-averaged kernel masses; d >= 2
    uses direct radial quadrature. Radius 0 is allowed in ``grid`` only when the
    convolution is bounded (2 r (d - gamma) < d).
    """
    _check_integrable(gamma, r, d)
    radii = radial_grid() if grid is None else np.asarray(grid, dtype=float)
    a = envelope_exponent(gamma, r, d)
    if np.any(radii == 0) and not (2 * a < d):
        raise ParameterError("self-convolution is unbounded at 0; drop radius 0 from the grid")
    if d == 1:
        spacing = 2.5e-4
        nodes, conv = self_convolution_fft_1d(gamma, r, spacing)
        if radii.max() > nodes[-1] / 2:
            raise ParameterError("radial grid exceeds the convolution box")
        values = np.interp(radii, nodes, conv)
        method = {"method": "fft", "spacing": spacing, "n": 2 ** 18}
    else:
        values = np.array([self_convolution_direct(gamma, r, d, float(s)) for s in radii])
        method = {"method": "radial_quadrature"}
    return KernelTable(gamma, d, radii, values, QUAD_EPSREL, r, "self_convolution", method)


@dataclass
class EnvelopeReport:
    constant: float          # N' = 2 N ||R^r||_1
    kernel_bound: float      # N with R^r <= N h
    exponent: float          # h(x) = |x|^{-exponent}
    fraction_within: float
    decay_rate: float        # fitted exponential rate on radii >= decay_from
    decay_rate_required: float
    decays: bool
    bounded: bool
    sup: float

    @property
    def holds(self) -> bool:
        return self.fraction_within == 1.0 and self.decays


def _envelope(radius, a, gamma, d):
    radius = np.asarray(radius, dtype=float)
    if gamma < d:
        return np.power(radius, -a)
    if gamma == d:
        return 1.0 + np.log1p(1.0 / radius)
    return np.ones_like(radius)


def decay_envelope_check(table: KernelTable, decay_from: float = 6.0) -> EnvelopeReport:
    """Check |(R^r*R^r)(x)| <= N' h(x/2) and exponential decay of a self-convolution table.

    N is fitted as sup R^r / h over a dense radial sweep of the kernel itself, then
    N' = 2 N ||R^r||_1, the constant of the convolution bound. The decay requirement is
    rate >= r/6, i.e. domination by g(x/3) with g(x) = exp(-r|x|/2).
    """
    if table.kind != "self_convolution":
        raise ParameterError("expected a self-convolution table")
    gamma, d, r = table.gamma, table.d, table.power
    a = envelope_exponent(gamma, r, d)
    g = kernel_interpolant(float(gamma), int(d), float(r))
    sweep = np.logspace(-7, math.log10(60.0), 2000)
    N = float(np.max(g(sweep) / _envelope(sweep, a, gamma, d)))
    l1 = kernel_power_norm(gamma, d, r)
    constant = 2.0 * N * l1
    pos = table.radii > 0
    bound = constant * _envelope(table.radii[pos] / 2, a, gamma, d)
    within = np.abs(table.values[pos]) <= bound
    fraction = float(np.mean(within))

    tail = table.radii >= decay_from
    rate = float("nan")
    decays = False
    if np.count_nonzero(tail) >= 3:
        rt, vt = table.radii[tail], table.values[tail]
        if np.all(vt > 0):
            slope = np.polyfit(rt, np.log(vt), 1)[0]
            rate = -float(slope)
            decays = bool(np.all(np.diff(vt) < 0) and rate >= r / 6)
    return EnvelopeReport(constant, N, a, fraction, rate, r / 6, decays, bool(2 * a < d), table.sup())


# ---------------------------------------------------------------------------
# Constants A and I
# ---------------------------------------------------------------------------

def conjugate_exponent(s: float) -> float:
    if not s > 1:
        raise ParameterError(f"s must lie in (1, inf], got {s}")
    return 1.0 if math.isinf(s) else s / (s - 1)


def i_constant_finite(measure: SpectralMeasure, gamma: float, s: float) -> bool:
    """Finiteness test for I before any quadrature.

    d = 1: R_{1-gamma} in L_{2r}, i.e. 2 r gamma < 1 (no condition on mu).
    d >= 2: int_{|x|<1} |x|^{r(1-gamma-d)} mu(dx) < infinity, decided from exponents.
    """
    d = measure.d
    r = conjugate_exponent(s)
    if d == 1:
        return 2 * r * gamma < 1
    if measure.mu_density is None:
        return False
    return r * (1 - gamma - d) + measure.mu_local_exponent() > -d


def estimate_constants(measure: SpectralMeasure, gamma: float, s: float, d: int | None = None):
    """Return (A, I) for the coefficient estimate, with I = ``INFINITE`` if its test fails."""
    d = measure.d if d is None else d
    if d != measure.d:
        raise ParameterError("dimension mismatch between measure and request")
    if not (0 <= gamma < 1):
        raise ParameterError(f"gamma must lie in [0, 1), got {gamma}")
    r = conjugate_exponent(s)
    A = measure.tempered_integral()
    if not i_constant_finite(measure, gamma, s):
        return A, INFINITE
    kern_order = 1 - gamma
    if measure.mu_density is None:
        return A, kernel_power_norm(kern_order, d, 2 * r)
    k = measure.tempering_exponent
    upper = 40.0 / r + 10.0
    radii = radial_grid(1e-4, upper, 16 if d == 1 else 8)
    if d == 1:
        nodes, conv = self_convolution_fft_1d(kern_order, r)
        vals = np.interp(radii, nodes, conv)
    else:
        vals = np.array([self_convolution_direct(kern_order, r, d, float(x)) for x in radii])
    # drop the far tail once it sinks into FFT round-off; it contributes below tolerance
    low = np.flatnonzero(~(vals > 1e-13 * vals.max()))
    if low.size:
        radii, vals = radii[: low[0]], vals[: low[0]]
    upper = float(radii[-1])
    # smooth log-log interpolant of the convolution, continued by its end slope below 1e-4
    loglog = interpolate.PchipInterpolator(np.log(radii), np.log(vals), extrapolate=True)
    ls0 = math.log(radii[0])
    slope0 = float(loglog(ls0, 1))

    def conv_fun(rho):
        ls = math.log(rho)
        if ls < ls0:
            return math.exp(float(loglog(ls0)) + slope0 * (ls - ls0))
        return math.exp(float(loglog(ls)))

    # near 0 the integrand behaves like rho^{d-1+e+c}, with mu(dx) ~ |x|^e dx and the
    # convolution ~ rho^c; that power goes into the quadrature weight
    e = measure.mu_local_exponent()
    c = min(slope0, 0.0)
    regular = lambda rho: conv_fun(max(rho, 1e-12)) * (1 + rho * rho) ** (k * (r - 1) / 2) \
        * float(measure.mu_density(max(rho, 1e-12))) * max(rho, 1e-12) ** (-e - c)
    v_near = integrate.quad(regular, 0.0, 1.0, weight="alg", wvar=(d - 1 + e + c, 0.0),
                            limit=200, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL)[0]
    v_far = _quad_checked(lambda rho: rho ** (d - 1 + e + c) * regular(rho), 1.0, upper)
    return A, sphere_area(d) * (v_near + v_far)


def covariance_fourier_check(model: CovarianceModel, n: int, L: float, k_range=None) -> dict:
    """DFT of f sampled on a periodic 1-D grid versus the density of nu.

    ``k_range`` restricts the comparison. For Riesz the default band
    [8 * 2 pi / L, pi / (16 dx)] stays away from the pole at 0 (box truncation)
    and from the aliasing of the slowly decaying density near Nyquist.
    """
    if model.d != 1 or model.kind == "white":
        raise ParameterError("Fourier round-trip check is implemented for d = 1 function kernels")
    dx = L / n
    idx = np.fft.fftfreq(n, d=1.0 / n)
    x = idx * dx
    samples = covariance_radial(model, np.abs(x))
    if model.kind == "riesz":
        samples = samples.copy()
        samples[0] = (2.0 / (1 - model.alpha)) * (dx / 2) ** (1 - model.alpha) / dx
    xi = 2 * math.pi * np.fft.rfftfreq(n, d=dx)
    computed = np.fft.rfft(samples).real * dx / math.sqrt(2 * math.pi)
    expected = spectral_density_radial(model, xi)
    if k_range is None:
        k_range = (16 * math.pi / L, math.pi / dx / 16) if model.kind == "riesz" else (0.0, xi[-1] / 4)
    lo, hi = k_range
    sel = (xi >= lo) & (xi <= hi) & np.isfinite(expected) & (expected > 1e-12 * np.max(expected[np.isfinite(expected)]))
    rel = np.abs(computed[sel] - expected[sel]) / expected[sel]
    return {"xi": xi[sel], "computed": computed[sel], "expected": expected[sel],
            "max_rel_error": float(rel.max()) if rel.size else 0.0}
