import numpy as np
import pytest

from gradphi.gibbs import MCParams
from gradphi.homogenized import (SlopeOutOfTable, SurfaceTensionTable,
                                 build_sigma_table,
                                 discretization_error_check, identity_table,
                                 sample_on_torus, solve_homogenized)
from gradphi.lattice import TorusGrid
from gradphi.parabolic import Environment, solve_linear_parabolic
from gradphi.potential import PotentialSpec
from oracles import laplacian_eigenvalues

QUAD = PotentialSpec("quadratic", c=1.0)


def test_identity_table_interpolates_exactly():
    t = identity_table(2, 4.0, npts=9)
    rng = np.random.default_rng(0)
    q = rng.uniform(-4, 4, size=(50, 2))
    assert np.allclose(t(q), q, atol=1e-12)
    # node queries return node values exactly
    assert np.allclose(t(np.array([[1.0, -3.0]])), [[1.0, -3.0]])


def test_table_out_of_range():
    t = identity_table(2, 2.0, npts=5)
    with pytest.raises(SlopeOutOfTable):
        t(np.array([[2.5, 0.0]]))


def test_table_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    axis = np.linspace(-2, 2, 5)
    flux = rng.standard_normal((5, 5, 2))
    err = 0.1 * np.abs(rng.standard_normal((5, 5, 2)))
    t = SurfaceTensionTable(2, axis, flux, err, meta={"L": "8"})
    path = tmp_path / "table.txt"
    t.save(path)
    back = SurfaceTensionTable.load(path)
    assert np.allclose(back.flux, t.flux)
    assert np.allclose(back.stderr, t.stderr)
    assert back.meta["L"] == "8"
    q = rng.uniform(-2, 2, size=(20, 2))
    assert np.allclose(back(q), t(q))


def test_build_table_quadratic_is_identity():
    grid = TorusGrid(2, 4)
    mc = MCParams(seed=3, burn_in=30.0, horizon=500.0, record_stride=25,
                  dt=0.02)
    table = build_sigma_table(QUAD, grid, p_max=2.0, npts=5, mc=mc)
    nodes = np.stack(np.meshgrid(table.axis, table.axis, indexing="ij"),
                     axis=-1).reshape(-1, 2)
    flux = table.flux.reshape(-1, 2)
    err = table.stderr.reshape(-1, 2)
    assert np.all(np.abs(flux - nodes) < 4 * err + 1e-9)
    assert table.meta["ray_monotonicity_violations"] == 0


def test_build_table_symmetry_relations():
    grid = TorusGrid(2, 4)
    mc = MCParams(seed=5, burn_in=30.0, horizon=300.0, record_stride=25,
                  dt=0.02)
    table = build_sigma_table(QUAD, grid, p_max=2.0, npts=5, mc=mc)
    p = np.array([2.0, 1.0])
    base = table(p[None, :])[0]
    # sign flip
    assert np.allclose(table((-p)[None, :])[0], -base, atol=1e-12)
    # coordinate swap
    swapped = table(p[::-1][None, :])[0]
    assert np.allclose(swapped, base[::-1], atol=1e-12)
    # zero node
    assert np.allclose(table(np.zeros((1, 2)))[0], 0.0, atol=1e-12)


def test_solve_homogenized_mode_decay_matches_discrete_rate():
    # identity flux: linear heat equation; cos(2 pi x) decays at the
    # discrete rate lam = (2/eps^2)(1 - cos(2 pi eps))
    eps = 1.0 / 16
    f = sample_on_torus(lambda x: np.cos(2 * np.pi * x[..., 0]), 1, eps)
    tbl = identity_table(1, 2.0 * np.pi + 1, npts=9)
    dt = 2e-5
    times, frames, grid = solve_homogenized(tbl, f, eps, T=0.1, dt=dt,
                                            record_times=[0.0, 0.05, 0.1])
    lam = (2.0 / eps ** 2) * (1.0 - np.cos(2 * np.pi * eps))
    assert lam == pytest.approx(laplacian_eigenvalues(grid).ravel()[1])
    for t, u in zip(times, frames):
        pred = np.exp(-lam * t) * f.ravel()
        assert np.abs(u - pred).max() < 30 * dt * lam


def test_solve_homogenized_constant_and_mean_conservation():
    eps = 1.0 / 8
    f = np.full((8, 8), 1.3)
    tbl = identity_table(2, 2.0, npts=5)
    _, frames, _ = solve_homogenized(tbl, f, eps, T=0.2)
    assert np.allclose(frames[-1], 1.3)
    rng = np.random.default_rng(2)
    f2 = 0.05 * rng.standard_normal((8, 8))
    _, frames2, _ = solve_homogenized(tbl, f2, eps, T=0.2)
    assert abs(frames2[-1].mean() - f2.mean()) < 1e-10


def test_solve_homogenized_agrees_with_linear_solver():
    eps = 1.0 / 8
    rng = np.random.default_rng(3)
    f = rng.standard_normal((8, 8))
    tbl = identity_table(2, 60.0, npts=11)
    dt = 1e-4
    times, frames, grid = solve_homogenized(tbl, f, eps, T=0.05, dt=dt,
                                            record_times=[0.05])
    env = Environment.identity(grid)
    t2, frames2 = solve_linear_parabolic(env, f.ravel(), T=0.05, dt=dt)
    assert np.abs(frames[-1] - frames2[-1]).max() < 1e-8


def test_energy_dissipation_along_solve():
    eps = 1.0 / 8
    f = sample_on_torus(
        lambda x: np.sin(2 * np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1]),
        2, eps)
    tbl = identity_table(2, 10.0, npts=9)
    times, frames, grid = solve_homogenized(
        tbl, f, eps, T=0.05, record_times=np.linspace(0, 0.05, 9))
    from gradphi.lattice import gradient
    energies = []
    for u in frames:
        g = gradient(u, grid).T
        energies.append(np.mean([tbl.sigma_along(p) for p in g[::7]]))
    assert np.all(np.diff(energies) <= 1e-10)


def test_nonlinear_flux_callable():
    # cubic-growth flux through a callable rather than a table
    eps = 1.0 / 8

    def flux(q):
        q = np.asarray(q)
        nrm = np.linalg.norm(q, axis=-1, keepdims=True)
        return q * (1.0 + nrm ** 1.0)

    f = sample_on_torus(lambda x: 0.3 * np.sin(2 * np.pi * x[..., 0]), 2, eps)
    times, frames, grid = solve_homogenized(flux, f, eps, T=0.02)
    assert np.isfinite(frames[-1]).all()
    assert abs(frames[-1].mean() - f.mean()) < 1e-10
    # decays faster than the linear equation (flux multiplier >= 1)
    assert np.abs(frames[-1]).max() < np.abs(f).max()


def test_out_of_table_abort():
    eps = 1.0 / 8
    f = sample_on_torus(lambda x: np.sin(2 * np.pi * x[..., 0]), 1, eps)
    tbl = identity_table(1, 1.0, npts=5)   # too small for |grad f| ~ 2 pi
    with pytest.raises(SlopeOutOfTable):
        solve_homogenized(tbl, f, eps, T=0.05)


def test_discretization_errors_shrink():
    f = lambda x: np.sin(2 * np.pi * x[..., 0])
    tbl = identity_table(1, 2.0 * np.pi + 1, npts=9)
    rows = discretization_error_check(tbl, f, 1, [1 / 4, 1 / 8, 1 / 16, 1 / 32],
                                      T=0.05)
    errs = [r["l2_error"] for r in rows]
    assert np.all(np.diff(errs) < 0)          # monotone in eps
    # linear case: second-order convergence, so ratio ~ 4 per halving
    assert errs[0] / errs[1] > 2.5
