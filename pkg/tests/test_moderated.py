import numpy as np
import pytest

from gradphi.dynamics import simulate_stationary
from gradphi.lattice import TorusGrid
from gradphi.moderated import (HorizonTooShort, ModerationKernels,
                               choose_delta, exit_time_experiment,
                               moderated_env, moderated_env_finite,
                               moderated_tail_report, moderation_ratio,
                               wilson_interval)
from gradphi.parabolic import Environment, heat_kernel
from gradphi.potential import PotentialSpec

QUAD = PotentialSpec("quadratic", c=1.0)
DEGEN3 = PotentialSpec("degenerate_radial", r=3.0, R0=1.0)


def test_kernel_closed_forms():
    kern = ModerationKernels(0.3)
    assert kern.K(0.0) == pytest.approx(0.3 * 7.0 / 6.0)
    assert kern.K_integral() == pytest.approx(0.2)
    # closed-form K matches quadrature of int_t^inf s k(s) ds; the exact
    # substitution w = 1/(1+s) turns the tail into int_0^{1/(1+t)} of a
    # polynomial, which Gauss-Legendre integrates to machine precision
    nodes, weights = np.polynomial.legendre.leggauss(24)
    for t in np.linspace(0.0, 20.0, 40):
        v0 = 1.0 / (1.0 + t)
        v = 0.5 * v0 * (nodes + 1.0)
        w = 0.5 * v0 * weights
        # s k(s) ds = delta (v - v^2) dv after w-substitution
        tail = 0.3 * (w * (v - v ** 2)).sum()
        assert kern.K(t) == pytest.approx(kern.k(t) + tail, rel=1e-10)


def test_choose_delta_constraints():
    delta = choose_delta()
    assert 0 < delta <= 1.0
    kern = ModerationKernels(delta)
    assert kern.K_integral() <= 1.0
    assert kern.convolution_margin() >= 2.0 * 0.999
    # halving keeps both constraints (linearity in delta)
    half = ModerationKernels(delta / 2)
    assert half.K_integral() <= 1.0
    assert half.convolution_margin() >= 2.0


def test_choose_delta_cached_fixture():
    d1 = choose_delta()
    d2 = choose_delta()
    assert d1 == d2


def _constant_eig_traj(d, nside, P, nframes=240, spacing=0.5):
    """Synthetic trajectory whose eigenvalue fields are constant = P."""
    from gradphi.dynamics import Trajectory
    grid = TorusGrid(d, nside)
    times = np.arange(nframes) * spacing
    phi = np.zeros((nframes, grid.nsites))
    p = np.zeros(d)
    p[0] = P ** (1.0 / 1.0) - 1.0 if False else 0.0
    traj = Trajectory(grid, QUAD, p, times, phi, seed=0, dt=spacing)
    traj._cache["lm"] = np.full((nframes, grid.nsites), P)
    traj._cache["lp"] = np.full((nframes, grid.nsites), P)
    return traj


@pytest.mark.parametrize("d", [1, 2, 3])
def test_constant_eigenvalue_closed_form(d):
    # uniformly convex regime: m = delta / (12 d); with p = 0 the slope
    # scale is P = 1 and constant fields must equal it
    traj = _constant_eig_traj(d, 3, P=1.0, nframes=4000, spacing=0.25)
    got = moderated_env(traj, horizon=900.0, truncation_tail_tol=1e-6)
    expected = got["delta"] / (12.0 * d)
    assert np.allclose(got["values"], expected, rtol=1e-6)


def test_quadratic_potential_realizes_constant_regime():
    grid = TorusGrid(2, 4)
    traj = simulate_stationary(QUAD, grid, np.zeros(2), seed=5, burn_in=5.0,
                               horizon=1200.0, record_stride=25, dt=0.02)
    got = moderated_env(traj, horizon=900.0)
    expected = got["delta"] / 24.0
    assert np.allclose(got["values"], expected, rtol=1e-6)


def test_zero_lambda_minus_gives_zero():
    traj = _constant_eig_traj(2, 3, P=1.0, nframes=2000, spacing=0.25)
    traj._cache["lm"] = np.zeros_like(traj._cache["lm"])
    got = moderated_env(traj, horizon=450.0)
    assert np.all(got["values"] == 0.0)


def test_monotone_in_lambda_minus():
    traj_lo = _constant_eig_traj(1, 3, P=1.0, nframes=2000, spacing=0.25)
    traj_hi = _constant_eig_traj(1, 3, P=1.0, nframes=2000, spacing=0.25)
    rng = np.random.default_rng(0)
    lm = rng.uniform(0.0, 1.0, traj_lo._cache["lm"].shape)
    traj_lo._cache["lm"] = lm
    traj_hi._cache["lm"] = np.minimum(lm + 0.3, 1.0)
    lo = moderated_env(traj_lo, horizon=450.0)["values"]
    hi = moderated_env(traj_hi, horizon=450.0)["values"]
    assert np.all(hi >= lo - 1e-14)


def test_horizon_too_short_raises():
    traj = _constant_eig_traj(1, 3, P=1.0, nframes=40, spacing=0.25)
    with pytest.raises(HorizonTooShort):
        moderated_env(traj, horizon=8.0, truncation_tail_tol=1e-9)


def test_tail_report_concentrates_for_quadratic():
    rng = np.random.default_rng(1)
    base = choose_delta() / 24.0
    samples = base * (1.0 + 1e-6 * rng.standard_normal(5000))
    rep = moderated_tail_report(samples, r=3.0)
    assert abs(rep["mean"] - base) < 1e-6
    assert rep["max"] - rep["min"] < 1e-5 * base


def test_tail_report_degenerate_direction():
    grid = TorusGrid(2, 4)
    traj = simulate_stationary(DEGEN3, grid, np.array([2.0, 0.0]), seed=7,
                               burn_in=60.0, horizon=2500.0,
                               record_stride=100, dt=2e-3)
    got = moderated_env(traj, horizon=1800.0)
    rep = moderated_tail_report(got["values"], r=3.0)
    assert rep["m_tail"]["slope"] < 0
    assert rep["exponent"] == pytest.approx(3.0)


def test_moderation_ratio_constant_and_homogeneous():
    grid = TorusGrid(2, 5)
    env = Environment.identity(grid)
    times, frames = heat_kernel(env, 0.0, 0, T=40.0, dt=5e-3)
    # constant-eigenvalue m field at the evaluation frames
    m_frames = [0, len(times) // 8]
    delta = choose_delta()
    m_field = np.full((2, grid.nsites), delta / 24.0)
    r1, _ = moderation_ratio(times, frames, env, np.zeros(2), 1.0, m_field,
                             m_frames)
    r2, _ = moderation_ratio(times, 5.0 * frames, env, np.zeros(2), 1.0,
                             m_field, m_frames)
    assert r1 == pytest.approx(r2, rel=1e-9)
    assert np.isfinite(r1) and r1 > 0


def test_moderation_ratio_constant_field_zero():
    grid = TorusGrid(1, 6)
    env = Environment.identity(grid)
    times = np.linspace(0.0, 10.0, 30)
    frames = np.full((30, grid.nsites), 4.0)
    m_field = np.full((1, grid.nsites), 0.1)
    ratio, _ = moderation_ratio(times, frames, env, np.zeros(1), 1.0,
                                m_field, [0])
    assert ratio == 0.0


def test_finite_horizon_variant_constant_regime():
    grid = TorusGrid(2, 3)
    F = 400
    times = np.linspace(0.0, 1.0, F)
    lamm = np.ones((F, grid.nsites))
    lamp = np.ones((F, grid.nsites))
    vals = moderated_env_finite(times, lamm, lamp, grid, rate=64.0)
    # deep inside the window the truncated integral approaches delta/(12 d)
    mid = vals[F // 4]
    assert np.allclose(mid, choose_delta() / 24.0, rtol=0.05)
    # symmetric construction: the two halves mirror
    assert np.allclose(vals[1], vals[-2], rtol=1e-9)


def test_time_translation_invariance_of_m():
    # stationary trajectory: mean of m over two disjoint evaluation
    # windows agrees within 3 stderr
    grid = TorusGrid(2, 4)
    traj = simulate_stationary(DEGEN3, grid, np.array([2.0, 0.0]), seed=17,
                               burn_in=60.0, horizon=4000.0,
                               record_stride=200, dt=2e-3)
    nF = traj.nframes
    w1 = np.arange(0, nF // 4)
    w2 = np.arange(nF // 4, nF // 2)
    got1 = moderated_env(traj, horizon=1500.0, eval_frames=w1)
    got2 = moderated_env(traj, horizon=1500.0, eval_frames=w2)
    m1 = got1["values"].mean(axis=1)   # spatial mean per frame
    m2 = got2["values"].mean(axis=1)
    se = np.hypot(m1.std(ddof=1) / np.sqrt(len(m1)),
                  m2.std(ddof=1) / np.sqrt(len(m2)))
    assert abs(m1.mean() - m2.mean()) < 3 * se + 1e-12


def test_wilson_interval_basic():
    lo, hi = wilson_interval(8, 10)
    assert 0.4 < lo < 0.8 < hi <= 1.0
    lo0, hi0 = wilson_interval(0, 10)
    assert lo0 == pytest.approx(0.0, abs=1e-12) and hi0 < 0.5


def test_exit_time_probabilities_decrease():
    grid = TorusGrid(1, 4)
    got = exit_time_experiment(QUAD, grid, np.zeros(1), R1=6.0,
                               T_grid=[0.5, 2.0, 8.0], replicas=24, seed=3,
                               dt=0.01, burn_in=20.0)
    p = got["probability"]
    assert np.all(np.diff(p) <= 0)
    assert p[0] > 0.8       # R1 far above typical slopes


def test_exit_time_degenerate_leaves_eventually():
    grid = TorusGrid(2, 4)
    got = exit_time_experiment(DEGEN3, grid, np.zeros(2), R1=2.0,
                               T_grid=[1.0, 8.0, 40.0], replicas=24, seed=9,
                               dt=5e-3, burn_in=20.0)
    assert got["probability"][-1] < got["probability"][0] + 1e-12
