import numpy as np
import pytest

from gradphi.potential import (PotentialSpec, lambda_minus,
                               lambda_minus_field, lambda_plus,
                               lambda_plus_field, hessian_min_eig_field,
                               potential_eval, verify_assumption_A)


def fd_gradient(spec, x, h=1e-6):
    d = x.size
    out = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        vp = potential_eval(spec, (x + e)[None, :])[0][0]
        vm = potential_eval(spec, (x - e)[None, :])[0][0]
        out[i] = (vp - vm) / (2 * h)
    return out


def fd_hessian(spec, x, h=1e-5):
    d = x.size
    out = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        gp = potential_eval(spec, (x + e)[None, :])[1][0]
        gm = potential_eval(spec, (x - e)[None, :])[1][0]
        out[i] = (gp - gm) / (2 * h)
    return 0.5 * (out + out.T)


def test_radial_second_derivative_closed_form():
    spec = PotentialSpec("degenerate_radial", r=4.0, R0=1.0, c=1.0)
    x = np.array([2.0, 0.0])
    _, _, H = potential_eval(spec, x[None, :])
    # radial eigenvalue r(r-1)(|x|-R0)^(r-2) = 12, tangential r(|x|-R0)^(r-1)/|x| = 2
    eigs = np.linalg.eigvalsh(H[0])
    assert np.allclose(sorted(eigs), [2.0, 12.0])


def test_flat_region_is_exactly_flat():
    spec = PotentialSpec("degenerate_radial", r=3.0, R0=1.0)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 2))
    x *= (0.99 * rng.uniform(0, 1, 50) / np.linalg.norm(x, axis=1))[:, None]
    V, DV, D2V = potential_eval(spec, x)
    assert np.all(V == 0) and np.all(DV == 0) and np.all(D2V == 0)


def test_quadratic_variant():
    spec = PotentialSpec("quadratic", c=1.0)
    x = np.array([[1.5, -0.5], [0.0, 2.0]])
    V, DV, D2V = potential_eval(spec, x)
    assert np.allclose(DV, x)
    assert np.allclose(D2V, np.eye(2))
    assert np.allclose(V, 0.5 * (x ** 2).sum(axis=1))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for spec in [PotentialSpec("degenerate_radial", r=3.0, R0=1.0, c=0.7),
                 PotentialSpec("degenerate_radial", r=4.0, R0=0.5, c=2.0),
                 PotentialSpec("quadratic", c=1.3)]:
        pts = rng.uniform(-4, 4, size=(1000, 2))
        V, DV, _ = potential_eval(spec, pts)
        for k in rng.choice(1000, 60, replace=False):
            x = pts[k]
            if abs(np.linalg.norm(x) - spec.R0) < 2e-2:
                continue   # fd straddles the C^2 seam, slope only ~1e-4 accurate
            fd = fd_gradient(spec, x)
            assert np.allclose(DV[k], fd, rtol=1e-6, atol=1e-6), (spec, x)


def test_hessian_matches_finite_differences():
    rng = np.random.default_rng(2)
    spec = PotentialSpec("degenerate_radial", r=3.5, R0=1.0, c=1.0)
    for _ in range(40):
        x = rng.uniform(-4, 4, size=2)
        if abs(np.linalg.norm(x) - spec.R0) < 5e-2 or np.linalg.norm(x) < 0.1:
            continue
        _, _, H = potential_eval(spec, x[None, :])
        assert np.allclose(H[0], fd_hessian(spec, x), rtol=1e-5, atol=1e-5)


def test_convexity_inequality():
    rng = np.random.default_rng(3)
    for spec in [PotentialSpec("degenerate_radial", r=3.0, R0=1.0),
                 PotentialSpec("quadratic", c=0.8)]:
        x = rng.uniform(-5, 5, size=(200, 3))
        y = rng.uniform(-5, 5, size=(200, 3))
        Vx, DVx, _ = potential_eval(spec, x)
        Vy, _, _ = potential_eval(spec, y)
        gap = Vy - Vx - np.einsum("ki,ki->k", DVx, y - x)
        assert gap.min() >= -1e-10


def test_lambda_plus():
    spec = PotentialSpec("degenerate_radial", r=4.0, R0=1.0, c=1.0)
    assert lambda_plus(spec, np.zeros(2)) == 1.0
    assert lambda_plus(PotentialSpec("quadratic", c=3.0), np.ones(2)) == 3.0
    # |p| = 2: max(12, 2) vee 1 = 12
    assert np.isclose(lambda_plus(spec, np.array([2.0, 0.0])), 12.0)


def test_lambda_minus_flat_and_quadratic():
    spec = PotentialSpec("degenerate_radial", r=3.0, R0=1.0)
    assert lambda_minus(spec, np.array([0.5, 0.0])) == 0.0
    assert lambda_minus(PotentialSpec("quadratic", c=2.5), np.ones(2)) == 2.5


def test_lambda_minus_below_pointwise_min_eig():
    rng = np.random.default_rng(4)
    spec = PotentialSpec("degenerate_radial", r=3.0, R0=1.0)
    pts = rng.uniform(-6, 6, size=(100, 2))
    lm = np.array([lambda_minus(spec, p, refine=False) for p in pts])
    pointwise = hessian_min_eig_field(spec, pts)
    assert np.all(lm <= pointwise + 1e-9)


def test_lambda_minus_monotone_under_refinement():
    spec = PotentialSpec("degenerate_radial", r=3.0, R0=1.0)
    for p in [np.array([2.0, 1.0]), np.array([4.0, 0.0]), np.array([1.5, 1.5])]:
        coarse = lambda_minus(spec, p, n_radial=4, n_angular=4, refine=False)
        fine = lambda_minus(spec, p, n_radial=8, n_angular=7, refine=False)
        finest = lambda_minus(spec, p, n_radial=16, n_angular=13, refine=False)
        assert fine <= coarse + 1e-12
        assert finest <= fine + 1e-12


def test_lambda_minus_field_interpolates_radially():
    spec = PotentialSpec("degenerate_radial", r=3.0, R0=1.0)
    p = np.array([[3.0, 0.0], [0.0, 3.0], [3.0 / np.sqrt(2)] * 2])
    vals = lambda_minus_field(spec, p)
    assert np.allclose(vals, vals[0], rtol=1e-6)
    direct = lambda_minus(spec, p[0])
    assert np.isclose(vals[0], direct, rtol=2e-2)


def test_verify_assumption_A_degenerate():
    spec = PotentialSpec("degenerate_radial", r=4.0, R0=1.0, c=1.0)
    rep = verify_assumption_A(spec, radius_range=(2.0, 10.0), n_samples=400)
    assert 0 < rep["c_minus"] <= rep["c_plus"] < np.inf
    assert rep["min_eig_sampled"] >= 0
    assert np.isfinite(rep["R1"]) and rep["R1"] > 0
    # closed-form envelope: tangential/|x|^(r-2) in [r(1-R0/2)..r], radial
    # r(r-1)(1-R0/|x|)^(r-2) <= r(r-1)
    assert rep["c_plus"] <= spec.r * (spec.r - 1.0) + 1e-9
    assert rep["c_minus"] <= spec.r


def test_verify_assumption_A_quadratic_exact():
    rep = verify_assumption_A(PotentialSpec("quadratic", c=1.7))
    assert rep["c_minus"] == rep["c_plus"] == 1.7
    assert rep["r"] == 2.0


def test_lambda_plus_field_matches_scalar():
    spec = PotentialSpec("degenerate_radial", r=3.0, R0=1.0)
    pts = np.random.default_rng(5).uniform(-4, 4, size=(20, 2))
    vals = lambda_plus_field(spec, pts)
    for k in range(20):
        assert np.isclose(vals[k], lambda_plus(spec, pts[k]))


def test_spec_validation():
    with pytest.raises(ValueError):
        PotentialSpec("degenerate_radial", r=2.0)
    with pytest.raises(ValueError):
        PotentialSpec("nope")
    with pytest.raises(ValueError):
        PotentialSpec("quadratic", c=0.0)
