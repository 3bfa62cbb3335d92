"""White-in-time, spatially homogeneous Gaussian noise on a periodic grid.

An increment over a step dt has covariance dt * C_per, where C_per is the
circulant matrix of the periodized covariance sampled at grid lags. With
lambda_k the (real, even) DFT eigenvalues of C_per, the increment is drawn as

    W = sqrt(dt) * irfftn(sqrt(lambda_k) * rfftn(Z)),   Z ~ N(0, I) on the grid,

which is C_per^{1/2} Z in law and real by construction.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .covariance import CovarianceModel, covariance_radial, spectral_density_radial
from .errors import ModelResolutionError, ParameterError, StatisticsError

MAX_CELLS = 2 ** 24
CLAMP_LIMIT = 1e-3
MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class GridSpec:
    """Periodic grid of n^d points on the box [-L/2, L/2)^d."""

    d: int
    n: int
    L: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ParameterError(f"grid dimension must be 1, 2 or 3, got {self.d}")
        if self.n < 16 or self.n & (self.n - 1):
            raise ParameterError(f"n must be a power of two >= 16, got {self.n}")
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ParameterError("L must be positive")
        if self.n ** self.d > MAX_CELLS:
            raise ParameterError(f"grid has {self.n ** self.d} cells, above the limit {MAX_CELLS}")

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.dx ** self.d

    def axis(self) -> np.ndarray:
        return -self.L / 2 + self.dx * np.arange(self.n)

    def coords(self) -> list[np.ndarray]:
        ax = self.axis()
        return np.meshgrid(*([ax] * self.d), indexing="ij")

    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c * c for c in self.coords()))

    def lag_vectors(self) -> list[np.ndarray]:
        """Signed minimal-image lags (FFT layout) along each axis, physical units."""
        j = np.fft.fftfreq(self.n, d=1.0 / self.n)
        return np.meshgrid(*([j * self.dx] * self.d), indexing="ij")

    def wavenumbers(self, half: bool = False) -> list[np.ndarray]:
        k = 2 * math.pi * np.fft.fftfreq(self.n, d=self.dx)
        axes = [k] * self.d
        if half:
            axes[-1] = 2 * math.pi * np.fft.rfftfreq(self.n, d=self.dx)
        return np.meshgrid(*axes, indexing="ij")

    def to_dict(self) -> dict:
        return {"d": self.d, "n": self.n, "L": self.L}


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_seed(master: int, stream: int) -> int:
    """64-bit seed of path ``stream``: splitmix64(splitmix64(master) xor stream)."""
    return splitmix64(splitmix64(int(master) & MASK64) ^ (int(stream) & MASK64))


def _cube_riesz_average(alpha: float, d: int, h: float) -> float:
    """Average of |x|^{-alpha} over the cube [-h, h]^d.

    The cube splits into 2d pyramids with apex 0; on each, x = t(1, z) with
    z in [-1, 1]^{d-1} gives h^{d-alpha}/(d-alpha) * int (1+|z|^2)^{-alpha/2} dz.
    """
    if d == 1:
        J = 1.0
    elif d == 2:
        J = integrate.quad(lambda z: (1 + z * z) ** (-alpha / 2), -1, 1, epsabs=1e-14, epsrel=1e-12)[0]
    else:
        J = integrate.dblquad(lambda y, z: (1 + z * z + y * y) ** (-alpha / 2), -1, 1, -1, 1,
                              epsabs=1e-13, epsrel=1e-11)[0]
    total = 2 * d * h ** (d - alpha) / (d - alpha) * J
    return total / (2 * h) ** d


def covariance_lags(model: CovarianceModel, grid: GridSpec, images: int = 2) -> np.ndarray:
    """Periodized covariance at every grid lag (FFT layout): first column of C_per.

    White noise: 1/dx at lag 0. Gaussian: image sum over ``images`` shells.
    Riesz: the image sum diverges, so the minimal-image kernel is used and the
    singular cell at lag 0 is replaced by its cell average.
    """
    lags = grid.lag_vectors()
    if model.kind == "white":
        out = np.zeros(grid.shape)
        out[(0,) * grid.d] = 1.0 / grid.dx
        return out
    if model.kind == "gaussian":
        out = np.zeros(grid.shape)
        shifts = range(-images, images + 1)
        for offset in np.ndindex(*([len(shifts)] * grid.d)):
            r2 = sum((lag + (o - images) * grid.L) ** 2 for lag, o in zip(lags, offset))
            out += np.exp(-model.c * r2)
        return out
    r = np.sqrt(sum(lag * lag for lag in lags))
    out = covariance_radial(model, r)
    out[(0,) * grid.d] = _cube_riesz_average(model.alpha, grid.d, grid.dx / 2)
    return out


def spectral_eigenvalues(model: CovarianceModel, grid: GridSpec, aliases: int = 3) -> np.ndarray:
    """Eigenvalues of C_per from the density of nu by Poisson summation (half spectrum).

    lambda_k = dx^{-d} (2 pi)^{d/2} sum_m density(xi_k + 2 pi m / dx).
    """
    if model.kind == "riesz":
        raise ParameterError("the aliased Riesz spectral sum diverges; use the circulant route")
    ks = grid.wavenumbers(half=True)
    if model.kind == "white":
        return np.full(ks[0].shape, 1.0 / grid.dx)
    period = 2 * math.pi / grid.dx
    out = np.zeros(ks[0].shape)
    shifts = range(-aliases, aliases + 1)
    for offset in np.ndindex(*([len(shifts)] * grid.d)):
        k2 = sum((k + (o - aliases) * period) ** 2 for k, o in zip(ks, offset))
        out += spectral_density_radial(model, np.sqrt(k2))
    return out * (2 * math.pi) ** (grid.d / 2) / grid.cell_volume


def circulant_eigenvalues(model: CovarianceModel, grid: GridSpec) -> np.ndarray:
    """Eigenvalues of C_per as the DFT of its first column (half spectrum)."""
    return np.fft.rfftn(covariance_lags(model, grid)).real


@dataclass
class NoiseIncrement:
    values: np.ndarray
    dt: float
    seed: int = 0
    stream: int = 0
    index: int = 0

    def to_binary(self, path, grid: GridSpec, model: CovarianceModel) -> None:
        from .io import write_field
        write_field(path, self.values, {"grid": grid.to_dict(), "dt": self.dt, "seed": self.seed,
                                        "stream": self.stream, "index": self.index,
                                        "model": model.to_dict()})


@dataclass
class NoiseSampler:
    grid: GridSpec
    model: CovarianceModel
    amplitudes: np.ndarray
    seed: int
    stream: int
    route: str
    clamped_fraction: float
    rng: np.random.Generator = field(repr=False, default=None)
    draws: int = 0

    @property
    def _axes(self) -> tuple:
        return tuple(range(-self.grid.d, 0))

    def standard_normal(self) -> np.ndarray:
        self.draws += 1
        return self.rng.standard_normal(self.grid.shape)

    def color(self, z: np.ndarray) -> np.ndarray:
        """Apply C_per^{1/2} to a grid field."""
        return np.fft.irfftn(self.amplitudes * np.fft.rfftn(z), s=self.grid.shape, axes=self._axes)

    def sample(self, dt: float, substeps: int = 1) -> NoiseIncrement:
        """Increment over dt; with ``substeps`` = s the s fine draws are summed.

        A run at dt with s = 2 consumes the same stream as a run at dt/2 with
        s = 1 and sees the sums of its increments (matched refinements).
        """
        if not dt > 0:
            raise ParameterError("dt must be positive")
        index = self.draws
        z = self.standard_normal()
        for _ in range(substeps - 1):
            z = z + self.standard_normal()
        if substeps > 1:
            z = z / math.sqrt(substeps)
        return NoiseIncrement(math.sqrt(dt) * self.color(z), dt, self.seed, self.stream, index)

    def covariance_matrix(self) -> np.ndarray:
        """Dense covariance of one unit-dt increment implied by the sampler."""
        m = self.grid.n ** self.grid.d
        cols = np.empty((m, m))
        for j in range(m):
            e = np.zeros(m)
            e[j] = 1.0
            cols[:, j] = self.color(e.reshape(self.grid.shape)).ravel()
        return cols @ cols.T


def build_sampler(model: CovarianceModel, grid: GridSpec, seed: int, stream: int = 0,
                  route: str = "auto") -> NoiseSampler:
    """Sampler for ``model`` on ``grid``; ``route`` is "spectral", "circulant" or "auto"."""
    if model.d != grid.d:
        raise ParameterError("covariance and grid dimensions differ")
    if route == "auto":
        route = "circulant" if model.kind == "riesz" else "spectral"
    if route == "spectral":
        lam = spectral_eigenvalues(model, grid)
    elif route == "circulant":
        lam = circulant_eigenvalues(model, grid)
    else:
        raise ParameterError(f"unknown synthesis route {route!r}")
    # weights: interior rfft columns stand for a conjugate pair
    w = np.full(lam.shape, 2.0)
    w[..., 0] = 1.0
    if grid.n % 2 == 0:
        w[..., -1] = 1.0
    neg = np.minimum(lam, 0.0)
    total = float(np.sum(w * np.abs(lam)))
    clamped = float(np.sum(w * np.abs(neg)) / total) if total > 0 else 0.0
    if clamped >= CLAMP_LIMIT:
        raise ModelResolutionError(
            f"circulant has negative mass fraction {clamped:.3g} >= {CLAMP_LIMIT}; refine the grid or enlarge L")
    amplitudes = np.sqrt(np.maximum(lam, 0.0))
    rng = np.random.Generator(np.random.PCG64(stream_seed(seed, stream)))
    return NoiseSampler(grid, model, amplitudes, int(seed), int(stream), route, clamped, rng)


def dense_periodized_covariance(model: CovarianceModel, grid: GridSpec) -> np.ndarray:
    """Dense C_per built entry by entry from pairwise minimal-image lags (oracle)."""
    pts = np.stack([c.ravel() for c in grid.coords()], axis=1)
    diff = pts[:, None, :] - pts[None, :, :]
    diff = (diff + grid.L / 2) % grid.L - grid.L / 2
    if model.kind == "white":
        return np.eye(len(pts)) / grid.dx
    if model.kind == "gaussian":
        out = np.zeros((len(pts), len(pts)))
        for offset in np.ndindex(*([5] * grid.d)):
            shift = (np.array(offset) - 2) * grid.L
            out += np.exp(-model.c * np.sum((diff + shift) ** 2, axis=-1))
        return out
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    out = covariance_radial(model, r)
    np.fill_diagonal(out, _cube_riesz_average(model.alpha, grid.d, grid.dx / 2))
    return out


def law_check(model: CovarianceModel, grid: GridSpec, route: str = "auto") -> float:
    """max |A A^T - C_per| / max |C_per| for the sampler's linear map A (dense oracle)."""
    sampler = build_sampler(model, grid, 0, 0, route)
    implied = sampler.covariance_matrix()
    dense = dense_periodized_covariance(model, grid)
    return float(np.max(np.abs(implied - dense)) / np.max(np.abs(dense)))


@dataclass
class CovarianceEstimate:
    lag: tuple
    estimate: float
    standard_error: float


def empirical_covariance(samples, lags) -> list[CovarianceEstimate]:
    """Spatially averaged lag covariances with delete-one jackknife standard errors.

    The increments have known mean 0, so E[w(x) w(x+h)] is estimated without
    centring; each sample contributes its average over all base points x.
    """
    arr = np.asarray([s.values if isinstance(s, NoiseIncrement) else s for s in samples], dtype=float)
    N = arr.shape[0]
    if N < 100:
        raise StatisticsError(f"need at least 100 samples, got {N}")
    dims = arr.ndim - 1
    out = []
    for lag in lags:
        shift = (int(lag),) * 1 if np.isscalar(lag) else tuple(int(v) for v in lag)
        if len(shift) != dims:
            shift = shift + (0,) * (dims - len(shift))
        rolled = np.roll(arr, shift=[-s for s in shift], axis=tuple(range(1, dims + 1)))
        per = np.mean(arr * rolled, axis=tuple(range(1, dims + 1)))
        est = float(per.mean())
        loo = (per.sum() - per) / (N - 1)
        se = float(math.sqrt((N - 1) / N * np.sum((loo - loo.mean()) ** 2)))
        out.append(CovarianceEstimate(shift if dims > 1 else shift[0], est, se))
    return out


def save_increments(path, increments, grid: GridSpec, model: CovarianceModel) -> None:
    from .io import write_field
    stack = np.stack([w.values for w in increments])
    first = increments[0]
    write_field(path, stack, {"grid": grid.to_dict(), "dt": first.dt, "seed": first.seed,
                              "stream": first.stream, "count": len(increments),
                              "model": model.to_dict()})


def covariance_profile_json(estimates, dt: float, reference) -> str:
    rows = [{"lag": e.lag, "estimate": e.estimate, "standard_error": e.standard_error,
             "expected": float(dt * ref)} for e, ref in zip(estimates, reference)]
    return json.dumps(rows, indent=2)
