"""Exact admissibility conditions and regularity exponents.

Three parallel regimes are recognised for the equation

    du = (a^{ij} u_{x^i x^j} + b^i u_{x^i} + c u) dt + xi |u|^{1+lambda} dF:

  (i)   d = 1, 0 <= lambda < 1/2, 0 < gamma < 1/2 - lambda, p > 3/gamma;
  (ii)  d >= 2, 0 <= lambda < 1/(2d), 0 < gamma < gamma0, p > (d+2)/gamma, and
        int_{|x|<1} |x|^{(1-gamma-d)/(1-2 lambda)} mu(dx) < infinity;
  (iii) f bounded and continuous, 0 <= lambda < 1/d, 0 < gamma < gamma1, p > (d+2)/gamma.

Everything here is decided by exact exponent comparisons; no quadrature. Inputs
are read as the decimals they print as (0.3 means 3/10) and all arithmetic is
rational, so results are correctly rounded and boundary cases are decided exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

from .covariance import CovarianceModel
from .errors import NotApplicableError, ParameterError

CONDITION_ORDER = ("iii", "i", "ii")


HALF = Fraction(1, 2)


def q(x) -> Fraction:
    """Exact rational value of the shortest decimal representing ``x``."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    x = float(x)
    if not math.isfinite(x):
        raise ParameterError(f"expected a finite number, got {x}")
    return Fraction(repr(x))


def _reciprocal(x: Fraction) -> float:
    try:
        return math.inf if x == 0 else float(1 / x)
    except OverflowError:
        return math.inf


def _gamma0(d: int, lam: Fraction) -> Fraction:
    return HALF - 2 * d * (lam - Fraction(1, 4 * d)) * (lam > Fraction(1, 4 * d))


def _gamma1(d: int, lam: Fraction) -> Fraction:
    return HALF - d * (lam - Fraction(1, 2 * d)) * (lam > Fraction(1, 2 * d))


def gamma0(d: int, lam: float) -> float:
    if lam < 0:
        raise ParameterError("lambda must be nonnegative")
    return float(_gamma0(d, q(lam)))


def gamma1(d: int, lam: float) -> float:
    if lam < 0:
        raise ParameterError("lambda must be nonnegative")
    return float(_gamma1(d, q(lam)))


def mu_local_exponent(model: CovarianceModel) -> Fraction | None:
    """e with mu(dx) ~ |x|^e dx near 0; None for the point mass (white noise)."""
    if model.kind == "white":
        return None
    if model.kind == "riesz":
        return -q(model.alpha)
    return Fraction(0)


def _integrability(model: CovarianceModel, d: int, lam: Fraction, gamma: Fraction) -> tuple[bool, Fraction | None]:
    if lam >= HALF:
        return False, None
    exponent = (1 - gamma - d) / (1 - 2 * lam)
    e = mu_local_exponent(model)
    if e is None:
        # point mass at 0 against the power |x|^exponent
        return exponent >= 0, None
    return exponent + e + d > 0, exponent + e + d


def integrability_holds(model: CovarianceModel, d: int, lam: float, gamma: float) -> bool:
    """Closed-form test of int_{|x|<1} |x|^{(1-gamma-d)/(1-2 lambda)} mu(dx) < infinity."""
    return _integrability(model, d, q(lam), q(gamma))[0]


def _gamma_star(d: int, lam: Fraction, model: CovarianceModel) -> Fraction | None:
    candidates = []
    if model.bounded_continuous and lam < Fraction(1, d):
        candidates.append(_gamma1(d, lam))
    if d == 1 and lam < HALF:
        candidates.append(HALF - lam)
    if d >= 2 and lam < Fraction(1, 2 * d):
        e = mu_local_exponent(model)
        if e is not None:
            # gamma < 1 - d + (1 - 2 lambda)(e + d) from the integrability test
            bound = min(_gamma0(d, lam), 1 - d + (1 - 2 * lam) * (e + d))
            if bound > 0:
                candidates.append(bound)
    return max(candidates) if candidates else None


def gamma_star(d: int, lam: float, model: CovarianceModel) -> float | None:
    """Supremum of admissible gamma (not attained), or None if no regime applies."""
    if lam < 0:
        raise ParameterError("lambda must be nonnegative")
    gs = _gamma_star(d, q(lam), model)
    return None if gs is None else float(gs)


@dataclass(frozen=True)
class ProblemSpec:
    d: int
    lam: float
    model: CovarianceModel
    gamma: float
    p: float

    def __post_init__(self):
        for name in ("lam", "gamma", "p"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if self.lam < 0:
            raise ParameterError("lambda must be nonnegative")
        if not (0 < self.gamma < 1):
            raise ParameterError("gamma must lie in (0, 1)")
        if not self.p > 2:
            raise ParameterError("p must exceed 2")
        if self.model.d != self.d:
            raise ParameterError("covariance dimension differs from problem dimension")


@dataclass
class HolderWindow:
    alpha_range: tuple[float, float]
    beta_range: tuple[float, float]
    delta_max: float

    @property
    def nonempty(self) -> bool:
        return self.alpha_range[0] < self.beta_range[1]


@dataclass
class AdmissibilityReport:
    admissible: bool
    matched_condition: str
    matched_conditions: list[str]
    gamma0: float
    gamma1: float
    gamma_star: float | None
    gamma_star_attained: bool
    p_min: float
    holder_window: HolderWindow
    s_heuristic: float
    rejection_reason: str = ""
    reasons: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["holder_window"] = {
            "alpha_range": list(self.holder_window.alpha_range),
            "beta_range": list(self.holder_window.beta_range),
            "delta_max": self.holder_window.delta_max,
        }
        if math.isinf(self.s_heuristic):
            out["s_heuristic"] = None
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def holder_window(d: int, gamma: float, p: float) -> HolderWindow:
    """1/p < alpha < beta < gamma/2 - d/(2p) and 0 <= delta < gamma - 2 beta - d/p.

    ``delta_max`` is the supremum over admissible beta, i.e. gamma - (d + 2)/p.
    """
    g, pp = q(gamma), q(p)
    lo, hi = float(1 / pp), float(g / 2 - Fraction(d, 2) / pp)
    return HolderWindow((lo, hi), (lo, hi), float(g - (d + 2) / pp))


def _condition_failures(spec: ProblemSpec) -> dict:
    d, model = spec.d, spec.model
    lam, gamma, p = q(spec.lam), q(spec.gamma), q(spec.p)
    g0, g1 = _gamma0(d, lam), _gamma1(d, lam)
    fails = {}
    r = []
    if d != 1:
        r.append("requires d = 1")
    if not lam < HALF:
        r.append(f"lambda = {spec.lam:g} >= 1/2")
    if not gamma < HALF - lam:
        r.append(f"gamma = {spec.gamma:g} >= 1/2 - lambda = {float(HALF - lam):g}")
    if not p > 3 / gamma:
        r.append(f"p = {spec.p:g} <= 3/gamma = {float(3 / gamma):g}")
    fails["i"] = r
    r = []
    if d < 2:
        r.append("requires d >= 2")
    if not lam < Fraction(1, 2 * d):
        r.append(f"lambda = {spec.lam:g} >= 1/(2d) = {1 / (2 * d):g}")
    if not gamma < g0:
        r.append(f"gamma = {spec.gamma:g} >= gamma0 = {float(g0):g}")
    if not p > (d + 2) / gamma:
        r.append(f"p = {spec.p:g} <= (d+2)/gamma = {float((d + 2) / gamma):g}")
    ok, value = _integrability(model, d, lam, gamma)
    if not ok:
        if value is None:
            r.append("integrability fails: mu has an atom at 0" if lam < HALF else "integrability needs lambda < 1/2")
        else:
            r.append(f"integrability fails: (1-gamma-d)/(1-2 lambda) + e + d = {float(value):.4g} <= 0")
    fails["ii"] = r
    r = []
    if not model.bounded_continuous:
        r.append("requires a bounded continuous covariance")
    if not lam < Fraction(1, d):
        r.append(f"lambda = {spec.lam:g} >= 1/d = {1 / d:g}")
    if not gamma < g1:
        r.append(f"gamma = {spec.gamma:g} >= gamma1 = {float(g1):g}")
    if not p > (d + 2) / gamma:
        r.append(f"p = {spec.p:g} <= (d+2)/gamma = {float((d + 2) / gamma):g}")
    fails["iii"] = r
    return fails


def check_admissible(spec: ProblemSpec) -> AdmissibilityReport:
    d, lam = spec.d, spec.lam
    fails = _condition_failures(spec)
    matched = [c for c in CONDITION_ORDER if not fails[c]]
    admissible = bool(matched)
    first = matched[0] if matched else "none"
    if admissible:
        reason = ""
    else:
        # report the reason from the regime that is structurally applicable
        if spec.model.bounded_continuous:
            key = "iii"
        else:
            key = "i" if d == 1 else "ii"
        reason = "; ".join(fails[key])
    lq = q(lam)
    if first == "iii" or (first == "none" and spec.model.bounded_continuous):
        s = _reciprocal(lq)
    else:
        s = _reciprocal(2 * lq)
    return AdmissibilityReport(
        admissible=admissible,
        matched_condition=first,
        matched_conditions=matched,
        gamma0=gamma0(d, lam),
        gamma1=gamma1(d, lam),
        gamma_star=gamma_star(d, lam, spec.model),
        gamma_star_attained=False,
        p_min=float((d + 2) / q(spec.gamma)),
        holder_window=holder_window(d, spec.gamma, spec.p),
        s_heuristic=s,
        rejection_reason=reason,
        reasons={k: v for k, v in fails.items()},
    )


def holder_targets(spec: ProblemSpec, epsilon: float) -> tuple[float, float]:
    """(gamma* - eps, gamma*/2 - eps): predicted space and time Holder exponents."""
    gs = _gamma_star(spec.d, q(spec.lam), spec.model)
    if gs is None:
        raise NotApplicableError("no regime applies: gamma* is undefined")
    eps = q(epsilon)
    if not (0 < eps < gs / 2):
        raise ParameterError(f"epsilon must lie in (0, gamma*/2) = (0, {float(gs / 2):g})")
    return float(gs - eps), float(gs / 2 - eps)
