from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spdelab.covariance import CovarianceModel
from spdelab.errors import AssumptionViolation, ParameterError, StatisticsError
from spdelab.noise import GridSpec, NoiseIncrement, build_sampler
from spdelab.solver import (Coefficients, DiffusionSpec, DriftSolver, MonitorConfig, SimulationState,
                            bump, check_assumptions, coefficient_preset, constant, discrete_bessel_norm,
                            lyapunov_check, mass_martingale_stat, run_path, step)

WHITE = CovarianceModel.white()


def dense_operator_1d(a, b, c, h, form="nondivergence", a_half=None):
    """Dense centred-difference matrix on a periodic 1-D grid, built entry by entry."""
    n = len(a)
    L = np.zeros((n, n))
    for j in range(n):
        jp, jm = (j + 1) % n, (j - 1) % n
        if form == "divergence":
            ap, am = a_half[j], a_half[jm]
            L[j, jp] += ap / h ** 2
            L[j, jm] += am / h ** 2
            L[j, j] -= (ap + am) / h ** 2
        else:
            L[j, jp] += a[j] / h ** 2
            L[j, jm] += a[j] / h ** 2
            L[j, j] -= 2 * a[j] / h ** 2
        L[j, jp] += b[j] / (2 * h)
        L[j, jm] -= b[j] / (2 * h)
        L[j, j] += c[j]
    return L


def zero_noise(grid, dt):
    return NoiseIncrement(np.zeros(grid.shape), dt)


# --- assumptions ------------------------------------------------------------------

def test_identity_passes_with_zero_margins():
    grid = GridSpec(1, 64, 10.0)
    co = Coefficients(constant(np.eye(1)), constant(np.zeros(1)), constant(0.0), constant(1.0), 1.0, 1.0)
    r = check_assumptions(co, grid)
    assert r.passed
    assert r.ellipticity_lower_margin == 0 and r.ellipticity_upper_margin == 0
    assert r.c2_margin == 0 and r.xi_margin == 0


def test_ellipticity_upper_violation():
    grid = GridSpec(2, 16, 4.0)
    co = Coefficients(constant(2 * np.eye(2)), constant(np.zeros(2)), constant(0.0), constant(1.0), 1.0, 1.0)
    with pytest.raises(AssumptionViolation) as exc:
        check_assumptions(co, grid)
    assert exc.value.point is not None
    assert not check_assumptions(co, grid, raise_on_failure=False).passed


def test_c2_violation_by_c():
    grid = GridSpec(1, 256, 2 * math.pi)
    co = Coefficients(constant(np.eye(1)), constant(np.zeros(1)), lambda t, X: 2 * np.sin(X[0]),
                      constant(1.0), 1.0, 1.0)
    rep = check_assumptions(co, grid, raise_on_failure=False)
    assert not rep.passed and rep.worst_point["c2"]["c"] >= 2.0


@pytest.mark.parametrize("name", ["constant", "varying_a", "drift"])
def test_presets_satisfy_assumptions(name):
    for grid in (GridSpec(1, 1024, 20.0), GridSpec(2, 64, 20.0)):
        assert check_assumptions(coefficient_preset(name, grid), grid, times=(0.0, 1.0)).passed


def test_violating_preset_fails():
    grid = GridSpec(1, 64, 20.0)
    assert not check_assumptions(coefficient_preset("violating_c", grid), grid, raise_on_failure=False).passed


def test_unknown_preset():
    with pytest.raises(ParameterError):
        coefficient_preset("nope", GridSpec(1, 16, 1.0))


# --- diffusion coefficient --------------------------------------------------------------

def test_sigma_truncation_example():
    diff = DiffusionSpec(0.5, 2.0)
    assert diff.sigma(np.array([3.0]), 1.0)[0] == pytest.approx(2 ** 1.5, rel=1e-15)
    assert diff.sigma(np.array([-3.0]), 1.0)[0] == pytest.approx(2 ** 1.5, rel=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1.5), st.floats(0.1, 10), st.floats(-20, 20), st.floats(-20, 20), st.floats(0.1, 3))
def test_sigma_lipschitz_bound(lam, m, u, v, xi):
    diff = DiffusionSpec(lam, m)
    lhs = abs(diff.sigma(np.array(u), xi) - diff.sigma(np.array(v), xi))
    assert lhs <= diff.lipschitz_constant(xi) * abs(u - v) * (1 + 1e-12) + 1e-12


def test_diffusion_validation():
    with pytest.raises(ParameterError):
        DiffusionSpec(-0.1)
    with pytest.raises(ParameterError):
        DiffusionSpec(0.1, form="lipschitz_h")
    h = DiffusionSpec(0.0, form="lipschitz_h", h=np.tanh, h_lipschitz=1.0)
    assert h.lipschitz_constant(2.0) == 2.0


# --- stepping -----------------------------------------------------------------------

def test_zero_is_absorbing_in_one_step():
    grid = GridSpec(1, 64, 10.0)
    co = coefficient_preset("drift", grid)
    w = build_sampler(WHITE, grid, 0).sample(0.01)
    out = step(SimulationState(np.zeros(64)), co, DiffusionSpec(0.3), w, 0.01, grid=grid)
    assert np.array_equal(out.u, np.zeros(64)) and out.t == 0.01 and out.step_count == 1


def test_single_mode_decays_by_discrete_symbol():
    grid = GridSpec(1, 64, 2 * math.pi)
    co = coefficient_preset("heat", grid, xi=0.0)
    x = grid.axis()
    u = np.sin(x)
    dt = 0.01
    out = step(SimulationState(u), co, DiffusionSpec(), zero_noise(grid, dt), dt, grid=grid)
    h = grid.dx
    symbol = 4 * math.sin(h / 2) ** 2 / h ** 2
    assert np.allclose(out.u, u / (1 + dt * symbol), rtol=0, atol=1e-14)
    assert symbol == pytest.approx(1.0, rel=1e-3)


def test_step_rejects_mismatched_noise():
    grid = GridSpec(1, 32, 1.0)
    co = coefficient_preset("heat", grid)
    with pytest.raises(ParameterError):
        step(SimulationState(np.zeros(32)), co, DiffusionSpec(), zero_noise(grid, 0.1), 0.2, grid=grid)


@pytest.mark.parametrize("name,form", [("varying_a", "nondivergence"), ("drift", "nondivergence"),
                                       ("constant", "nondivergence"), ("varying_a", "divergence"),
                                       ("growth", "nondivergence")])
def test_step_matches_dense_oracle(name, form):
    grid = GridSpec(1, 32, 6.0)
    co = coefficient_preset(name, grid)
    A, B, C, XI = co.fields(grid)
    a_half = None
    if form == "divergence":
        a_half = co.fields(grid, 0.0, [grid.axis() + grid.dx / 2])[0][0, 0]
    L = dense_operator_1d(A[0, 0], B[0], C, grid.dx, form, a_half)
    dt, lam = 0.003, 0.25
    u = bump(grid) + 0.1
    w = build_sampler(WHITE, grid, 4).sample(dt)
    rhs = u + XI * np.abs(u) ** (1 + lam) * w.values
    expected = np.linalg.solve(np.eye(32) - dt * L, rhs)
    got = step(SimulationState(u), co, DiffusionSpec(lam), w, dt, DriftSolver(co, grid, form)).u
    assert np.max(np.abs(got - expected)) <= 1e-10 * np.max(np.abs(expected))


def test_fft_and_sparse_routes_agree_2d_cross_terms():
    grid = GridSpec(2, 16, 4.0)
    a = np.array([[1.0, 0.3], [0.3, 0.8]])
    co = Coefficients(constant(a), constant(np.array([0.2, -0.1])), constant(-0.5), constant(1.0), 0.5, 2.0)
    fft = DriftSolver(co, grid)
    assert fft.constant
    sparse = DriftSolver(co, grid)
    sparse.constant = False
    rhs = np.random.default_rng(0).standard_normal(grid.shape)
    assert np.max(np.abs(fft.solve(rhs, 0.0, 0.01) - sparse.solve(rhs, 0.0, 0.01))) < 1e-12


def test_time_dependent_operator_matches_dense():
    grid = GridSpec(1, 32, 5.0)
    a_fn = lambda t, X: np.multiply.outer(np.eye(1), (1 + 0.5 * np.sin(t)) * (1 + 0.1 * np.cos(X[0])))
    co = Coefficients(a_fn, constant(np.zeros(1)), constant(0.0), constant(0.0), 0.4, 2.0, time_dependent=True)
    solver = DriftSolver(co, grid)
    rhs = bump(grid)
    for t in (0.0, 0.7):
        A = co.fields(grid, t)[0][0, 0]
        L = dense_operator_1d(A, np.zeros(32), np.zeros(32), grid.dx)
        expected = np.linalg.solve(np.eye(32) - 0.02 * L, rhs)
        assert np.max(np.abs(solver.solve(rhs, t, 0.02) - expected)) < 1e-12


# --- paths and monitors -------------------------------------------------------------------

def test_zero_initial_data_gives_zero_monitors():
    grid = GridSpec(1, 64, 1.0)
    mon = MonitorConfig(thresholds=(1.0,), bessel=(0.5, 2.0))
    rec = run_path(np.zeros(64), coefficient_preset("heat", grid), DiffusionSpec(0.2),
                   build_sampler(WHITE, grid, 1), 1e-3, 0.05, mon)
    for series in (rec.sup_norm, rec.l1_mass, rec.min_value, rec.bessel_norm):
        assert all(v == 0 for v in series)
    assert rec.tau_hits == {1.0: None}
    assert len(rec.times) == len(rec.sup_norm) == 51


def test_deterministic_heat_conserves_mass_and_matches_fft():
    grid = GridSpec(1, 128, 4.0)
    u0 = bump(grid)
    dt, T = 1e-3, 0.1
    for form in ("nondivergence", "divergence"):
        rec = run_path(u0, coefficient_preset("heat", grid, xi=0.0), DiffusionSpec(), build_sampler(WHITE, grid, 0),
                       dt, T, MonitorConfig(snapshot_times=(T,)), form)
        assert max(abs(m - rec.l1_mass[0]) for m in rec.l1_mass) <= 1e-12
    k = 2 * np.pi * np.fft.fftfreq(128, d=grid.dx)
    mult = 1 / (1 + dt * 4 * np.sin(k * grid.dx / 2) ** 2 / grid.dx ** 2)
    expected = np.fft.ifft(np.fft.fft(u0) * mult ** 100).real
    assert np.max(np.abs(rec.snapshots[T] - expected)) < 1e-12


def test_growth_control_mass():
    grid = GridSpec(1, 64, 4.0)
    dt, T = 1e-3, 0.2
    rec = run_path(bump(grid), coefficient_preset("growth", grid, xi=0.0), DiffusionSpec(),
                   build_sampler(WHITE, grid, 0), dt, T)
    ratio = rec.l1_mass[-1] / rec.l1_mass[0]
    assert abs(ratio / math.exp(T) - 1) <= 2 * dt * T * 10


def test_truncation_consistency_bit_identical():
    grid = GridSpec(1, 128, 1.0)
    co = coefficient_preset("heat", grid)
    u0 = bump(grid)
    mon = MonitorConfig(snapshot_times=(0.02,))
    recs = [run_path(u0, co, DiffusionSpec(0.3, m), build_sampler(WHITE, grid, 9, 2), 1e-4, 0.02, mon)
            for m in (1e6, math.inf, 50.0)]
    assert max(recs[0].sup_norm) < 50
    for r in recs[1:]:
        assert np.array_equal(r.snapshots[0.02], recs[0].snapshots[0.02])
        assert r.sup_norm == recs[0].sup_norm


def test_tau_hits_monotone_and_consistent():
    grid = GridSpec(1, 128, 1.0)
    u0 = bump(grid)
    thresholds = tuple(2.0 ** k for k in range(-1, 4))
    rec = run_path(u0, coefficient_preset("heat", grid), DiffusionSpec(0.3), build_sampler(WHITE, grid, 3),
                   1e-4, 0.05, MonitorConfig(thresholds=thresholds))
    taus = [rec.tau_hits[R] for R in thresholds]
    assert taus[0] == 0.0
    for small, big in zip(taus, taus[1:]):
        assert big is None or (small is not None and small <= big)
    for R, tau in zip(thresholds, taus):
        first = next((t for t, s in zip(rec.times, rec.sup_norm) if s >= R), None)
        assert tau == first


def test_run_path_deterministic():
    grid = GridSpec(1, 64, 1.0)
    run = lambda: run_path(bump(grid), coefficient_preset("heat", grid), DiffusionSpec(0.25),
                           build_sampler(WHITE, grid, 5, 7), 1e-4, 0.01)
    a, b = run(), run()
    assert a.sup_norm == b.sup_norm and a.l1_mass == b.l1_mass and a.min_value == b.min_value


def test_blow_up_flagged():
    grid = GridSpec(1, 64, 1.0)
    rec = run_path(bump(grid, height=1e3), coefficient_preset("heat", grid, xi=1.0), DiffusionSpec(3.0, math.inf),
                   build_sampler(WHITE, grid, 0), 1e-3, 1.0)
    assert rec.blown_up and rec.failed and rec.steps < 1000


def test_probes_and_record_every():
    grid = GridSpec(1, 64, 1.0)
    mon = MonitorConfig(record_every=10, probe_points=np.array([0, 32]), probe_every=5)
    rec = run_path(bump(grid), coefficient_preset("heat", grid), DiffusionSpec(), build_sampler(WHITE, grid, 0),
                   1e-3, 0.1, mon)
    assert len(rec.times) == 11 and len(rec.probes) == 21 and rec.probes[0].shape == (2,)


# --- Bessel norm ---------------------------------------------------------------------

def test_bessel_norm_gamma_zero_is_lp_norm():
    grid = GridSpec(1, 64, 3.0)
    u = np.random.default_rng(0).standard_normal(64)
    assert discrete_bessel_norm(u, 0.0, 3.0, grid) == float((grid.dx * np.sum(np.abs(u) ** 3)) ** (1 / 3))


def test_bessel_norm_single_mode():
    grid = GridSpec(1, 128, 5.0)
    u = np.cos(2 * np.pi * grid.axis() / grid.L)
    l2 = math.sqrt(grid.dx * np.sum(u * u))
    expected = (1 + (2 * np.pi / grid.L) ** 2) ** 0.35 * l2
    assert discrete_bessel_norm(u, 0.7, 2.0, grid) == pytest.approx(expected, rel=1e-12)


def test_bessel_norm_dense_oracle():
    grid = GridSpec(1, 64, 7.0)
    u = np.random.default_rng(2).standard_normal(64)
    n = 64
    Fm = np.exp(-2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n)
    k = 2 * np.pi * np.fft.fftfreq(n, d=grid.dx)
    M = (np.conj(Fm).T @ np.diag((1 + k * k) ** 0.6) @ Fm / n).real
    v = M @ u
    expected = (grid.dx * np.sum(np.abs(v) ** 2.5)) ** (1 / 2.5)
    assert discrete_bessel_norm(u, 1.2, 2.5, grid) == pytest.approx(expected, rel=1e-10)


# --- Lyapunov function ------------------------------------------------------------------

def test_lyapunov_origin_value():
    grid = GridSpec(1, 1024, 20.0)
    worst, res = lyapunov_check(coefficient_preset("constant", grid), 1, grid, return_field=True)
    assert res[512] == pytest.approx(-5.0, abs=1e-12)
    assert worst <= 0


@pytest.mark.parametrize("name", ["constant", "varying_a", "drift"])
@pytest.mark.parametrize("k", [1, 2, 4])
def test_lyapunov_presets_nonpositive(name, k):
    for grid in (GridSpec(1, 1024, 20.0), GridSpec(2, 64, 20.0)):
        assert lyapunov_check(coefficient_preset(name, grid), k, grid) <= 1e-12


def test_lyapunov_violating_positive():
    grid = GridSpec(1, 1024, 20.0)
    worst, res = lyapunov_check(coefficient_preset("violating_c", grid), 1, grid, return_field=True)
    assert worst > 0 and res[512] == pytest.approx(10 - 4 - 1, abs=1e-12)


# --- mass statistic ---------------------------------------------------------------------

def test_mass_stat_deterministic_zero():
    grid = GridSpec(1, 64, 2.0)
    co = coefficient_preset("heat", grid, xi=0.0)
    recs = [run_path(bump(grid), co, DiffusionSpec(), build_sampler(WHITE, grid, 0, s), 1e-3, 0.05,
                     config_key="x") for s in range(3)]
    mean, se = mass_martingale_stat(recs, 0.05)
    assert abs(mean) <= 1e-12 and se <= 1e-12


def test_mass_stat_rejects_mixed_configs():
    grid = GridSpec(1, 32, 2.0)
    co = coefficient_preset("heat", grid, xi=0.0)
    recs = [run_path(bump(grid), co, DiffusionSpec(), build_sampler(WHITE, grid, 0, s), 1e-2, 0.05,
                     config_key=key) for s, key in enumerate("ab")]
    with pytest.raises(StatisticsError):
        mass_martingale_stat(recs, 0.05)
    with pytest.raises(StatisticsError):
        mass_martingale_stat(recs[:1], 0.05)
