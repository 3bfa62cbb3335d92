"""Structure-function estimates of space and time Holder exponents."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DegenerateDataError, StatisticsError
from .solvability import ProblemSpec, holder_targets

MIN_INCREMENTS = 32
MIN_LAGS = 5


def default_lags(length: int, count: int = 12) -> np.ndarray:
    """Integer lags spread geometrically over [4, length/8]."""
    hi = length // 8
    if hi < 4:
        raise StatisticsError(f"series of length {length} is too short for the lag window [4, length/8]")
    lags = np.unique(np.round(np.geomspace(4, hi, count)).astype(int))
    return lags


@dataclass
class StructureFunction:
    direction: str
    q: float
    lags: np.ndarray            # physical units
    values: np.ndarray          # pooled S_q(h)
    per_replicate: np.ndarray   # (replicates, lags)
    counts: np.ndarray          # increments per lag

    def rows(self):
        return list(zip(self.lags.tolist(), self.values.tolist(), self.counts.tolist()))


def _increments_moment(u: np.ndarray, lag: int, axis: int, q: float):
    a = np.take(u, np.arange(lag, u.shape[axis]), axis=axis)
    b = np.take(u, np.arange(0, u.shape[axis] - lag), axis=axis)
    return np.abs(a - b) ** q


def structure_function(data, direction: str = "space", q: float = 2.0, lags=None,
                       spacing: float = 1.0, d: int | None = None) -> StructureFunction:
    """S_q(h) = mean |u(. + h) - u(.)|^q with non-wrapping differences.

    ``direction = "space"``: ``data`` has shape (replicates, ..., n, ..., n) with the
    last ``d`` axes spatial (d defaults to 1); increments along every spatial axis
    are pooled. ``direction = "time"``: ``data`` has shape (replicates, steps, points)
    with time along axis 1. Lags are integers in grid or step units; ``spacing``
    converts them to physical units.
    """
    arr = np.asarray(data, dtype=float)
    if direction not in ("space", "time"):
        raise StatisticsError(f"unknown direction {direction!r}")
    if direction == "space":
        d = 1 if d is None else d
        if arr.ndim == d:
            arr = arr[None]
        axes = list(range(arr.ndim - d, arr.ndim))
        length = min(arr.shape[a] for a in axes)
    else:
        if arr.ndim == 1:
            arr = arr[None, :, None]
        elif arr.ndim == 2:
            arr = arr[:, :, None]
        axes = [1]
        length = arr.shape[1]
    if not np.all(np.isfinite(arr)):
        raise StatisticsError("data contain non-finite values")
    lags = default_lags(length) if lags is None else np.asarray(lags, dtype=int)
    if np.any(np.diff(lags) <= 0) or lags[0] < 1:
        raise StatisticsError("lags must be positive and strictly increasing")
    R = arr.shape[0]
    per = np.empty((R, len(lags)))
    counts = np.empty(len(lags), dtype=int)
    for j, lag in enumerate(lags):
        total = np.zeros(R)
        n = 0
        for ax in axes:
            m = _increments_moment(arr, int(lag), ax, q)
            total += m.reshape(R, -1).sum(axis=1)
            n += m[0].size
        if n < MIN_INCREMENTS:
            raise StatisticsError(f"lag {lag} has {n} increments per replicate, need {MIN_INCREMENTS}")
        per[:, j] = total / n
        counts[j] = n * R
    values = per.mean(axis=0)
    if np.all(values == 0):
        raise DegenerateDataError("field has zero increments at every lag (constant data)")
    return StructureFunction(direction, q, lags * float(spacing), values, per, counts)


@dataclass
class HolderEstimate:
    exponent: float
    ci: tuple[float, float]
    standard_error: float
    inconclusive: bool
    replicates: int
    note: str = ""

    @property
    def ci_width(self) -> float:
        return self.ci[1] - self.ci[0]


def _slope(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef


def estimate_holder(sf: StructureFunction, level: float = 0.95) -> HolderEstimate:
    """Least-squares slope of log S_q against log h, divided by q.

    The interval uses per-replicate slopes (t-distribution over replicates) when
    there are at least two replicates, otherwise the regression standard error.
    """
    if len(sf.lags) < MIN_LAGS:
        raise StatisticsError(f"need at least {MIN_LAGS} lags, got {len(sf.lags)}")
    if np.any(sf.values <= 0):
        return HolderEstimate(math.nan, (math.nan, math.nan), math.nan, True, len(sf.per_replicate),
                              "nonpositive structure function")
    x = np.log(sf.lags)
    slope, icpt = _slope(x, np.log(sf.values))
    exponent = slope / sf.q
    R = sf.per_replicate.shape[0]
    tq = lambda dof: stats.t.ppf(0.5 + level / 2, dof)
    if R >= 2 and np.all(sf.per_replicate > 0):
        slopes = np.array([_slope(x, np.log(row))[0] for row in sf.per_replicate]) / sf.q
        se = float(slopes.std(ddof=1) / math.sqrt(R))
        half = float(tq(R - 1) * se)
    else:
        resid = np.log(sf.values) - (slope * x + icpt)
        dof = len(x) - 2
        s2 = float(resid @ resid) / dof
        se = math.sqrt(s2 / float(np.sum((x - x.mean()) ** 2))) / sf.q
        half = float(tq(dof) * se)
    monotone = bool(np.all(np.diff(sf.values) > 0))
    note = "" if monotone else "structure function is not increasing over the lag window"
    return HolderEstimate(float(exponent), (exponent - half, exponent + half), se, not monotone, R, note)


@dataclass
class RegularityReport:
    space_exponent: float | None
    space_ci: tuple | None
    time_exponent: float | None
    time_ci: tuple | None
    target_space: float
    target_time: float
    tolerance: float
    verdict: str
    space_verdict: str
    time_verdict: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _one_sided(est: HolderEstimate | None, target: float, tol: float) -> str:
    if est is None:
        return "not_measured"
    if est.inconclusive or not math.isfinite(est.exponent):
        return "inconclusive"
    return "meets" if est.ci[0] >= target - tol else "below"


def compare_to_theory(space: HolderEstimate | None, time: HolderEstimate | None, spec: ProblemSpec,
                      epsilon: float, tolerance: float = 0.0) -> RegularityReport:
    """One-sided verdict: meets iff each measured interval's lower edge >= target - tolerance."""
    ts, tt = holder_targets(spec, epsilon)
    vs, vt = _one_sided(space, ts, tolerance), _one_sided(time, tt, tolerance)
    measured = [v for v in (vs, vt) if v != "not_measured"]
    if not measured or "inconclusive" in measured:
        verdict = "inconclusive"
    elif "below" in measured:
        verdict = "below"
    else:
        verdict = "meets"
    return RegularityReport(
        space.exponent if space else None, tuple(space.ci) if space else None,
        time.exponent if time else None, tuple(time.ci) if time else None,
        ts, tt, tolerance, verdict, vs, vt)
