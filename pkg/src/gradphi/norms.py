"""Norm zoo: volume-normalized L^q norms, the exact H^-1-type dual norm at
q = 2, the multiscale functional of cylinder averages, and the flux
weak-norm concentration experiment.

Parabolic cylinders follow the triadic convention: a cylinder of scale n
has 3^n sites per side and 3^(2n) time units, and is partitioned exactly
by translates of the scale-m cylinder on the lattice
(3^(2m) Z) x (3^m Z)^d.  Space-time fields are arrays of shape
(nframes, nsites) with nframes divisible by 9^n.
"""

import numpy as np

__all__ = ["lq_norm", "dual_norm_w12", "multiscale_poincare_functional",
           "cylinder_averages", "flux_weak_norm_experiment", "BadShape",
           "Unsupported"]


class BadShape(ValueError):
    pass


class Unsupported(ValueError):
    pass


def lq_norm(u, q, normalized=True, cell_volume=1.0):
    """L^q norm of a (space or space-time) field.

    normalized: volume-normalized norm (mean of |u|^q)^(1/q), the
    underlined convention; otherwise the measure-weighted norm with the
    given cell volume (the eps-weighted convention).
    """
    u = np.abs(np.asarray(u, dtype=np.float64)).ravel()
    if q < 1:
        raise ValueError("q must be >= 1")
    if np.isinf(q):
        return float(u.max()) if u.size else 0.0
    if normalized:
        return float((u ** q).mean() ** (1.0 / q))
    return float(((u ** q).sum() * cell_volume) ** (1.0 / q))


def dual_norm_w12(u, grid, length_scale=None):
    """Exact dual Sobolev norm at q = 2 through its variational problem.

    The W^{1,2} pairing used is the Hilbertian form |||v|||^2 =
    (1/ell^2)||v||^2 + ||grad v||^2 (volume-normalized); the supremum of
    (u, v)/|||v||| is attained by the single elliptic solve
    ((1/ell^2) - div grad) w = u and the returned value is the induced
    quadratic form sqrt((u, w)).  ell defaults to the torus circumference
    n * scale.  Fourier-exact on the torus.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (grid.nsites,):
        raise BadShape("field does not match grid")
    ell = grid.n * grid.scale if length_scale is None else length_scale
    freq = 2.0 * (1.0 - np.cos(2.0 * np.pi * np.arange(grid.n) / grid.n))
    lam = np.zeros(grid.shape)
    for i in range(grid.d):
        shape = [1] * grid.d
        shape[i] = grid.n
        lam = lam + freq.reshape(shape)
    lam /= grid.scale ** 2
    u_hat = np.fft.fftn(u.reshape(grid.shape), norm="ortho")
    val = (np.abs(u_hat) ** 2 / (ell ** -2 + lam)).sum() / grid.nsites
    return float(np.sqrt(val))


def _check_triadic(f, n_scale, d):
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2:
        raise BadShape("expected a (nframes, nsites) space-time field")
    side = 3 ** n_scale
    if f.shape[1] != side ** d:
        raise BadShape(f"expected {side}^{d} sites for scale {n_scale}")
    if f.shape[0] % 9 ** n_scale != 0:
        raise BadShape(f"nframes must be divisible by 9^{n_scale}")
    return f, side


def cylinder_averages(f, n_scale, m, d):
    """Averages of f over the translates of the scale-m cylinder that
    partition the scale-n cylinder.  f : (nframes, (3^n)^d).

    Returns an array of shape (time_blocks, space_blocks...)."""
    f, side = _check_triadic(f, n_scale, d)
    bt = f.shape[0] // 9 ** (n_scale - m)   # frames per time block
    bs = 3 ** m                              # sites per side per block
    nb = side // bs
    shape = (9 ** (n_scale - m), bt) + (nb, bs) * d
    g = f.reshape(shape)
    axes = (1,) + tuple(3 + 2 * i for i in range(d))
    return g.mean(axis=axes)


def multiscale_poincare_functional(f, q, n_scale, d):
    """Sum of scaled cylinder-average l^q means dominating the negative
    parabolic Sobolev norm (computed with unit constant):

        ||f||_Lq + sum_{m=0}^{n} 3^m ( mean_z |avg_{z+Q_{3^m}} f|^q )^(1/q)
    """
    f, _ = _check_triadic(f, n_scale, d)
    total = lq_norm(f, q)
    for m in range(n_scale + 1):
        av = cylinder_averages(f, n_scale, m, d)
        total += 3 ** m * lq_norm(av, q)
    return float(total)


def multiscale_poincare_vector(F, q, n_scale, d):
    """Component-wise functional for a vector field (nframes, nsites, ncomp),
    summed over components."""
    F = np.asarray(F, dtype=np.float64)
    return sum(multiscale_poincare_functional(F[:, :, i], q, n_scale, d)
               for i in range(F.shape[2]))


def flux_weak_norm_experiment(spec, p, n_scales, seed=0, frames_per_unit=1,
                              mc_builder=None, q=None):
    """Weak-norm sublinearity of the centered flux across triadic scales.

    For each n in n_scales (torus side 3^n, parabolic window 9^n time
    units): runs a stationary trajectory, centers its flux by an
    independently estimated mean flux, and reports

      * ratio: multiscale functional of the centered flux divided by 3^n,
      * cylinder-average variances per scale m (the concentration table).

    Returns a list of per-scale dicts; the sublinearity direction check is
    whether ratio decreases as n grows.
    """
    from .dynamics import default_dt
    from .gibbs import MCParams, surface_tension_gradient
    from .lattice import TorusGrid

    p = np.asarray(p, dtype=np.float64)
    d = p.size
    q = spec.growth_exponent if q is None else q
    rows = []
    for n_scale in n_scales:
        side = 3 ** n_scale
        grid = TorusGrid(d, side)
        horizon = float(9 ** n_scale)
        stride_time = 1.0 / frames_per_unit
        if mc_builder is None:
            mc = MCParams(seed=seed + n_scale, horizon=horizon)
        else:
            mc = mc_builder(n_scale, horizon)
        dt = mc.dt if mc.dt is not None else default_dt(spec, grid, p)
        # snap dt so an integer number of steps spans each frame interval
        stride = max(1, int(round(stride_time / dt)))
        dt = stride_time / stride
        traj = MCParams(
            seed=mc.seed, burn_in=mc.burn_in, horizon=horizon,
            record_stride=stride, dt=dt,
            stream=mc.stream,
        ).run(spec, grid, p)
        nframes = 9 ** n_scale * frames_per_unit
        if traj.nframes < nframes:
            raise BadShape("trajectory too short for the triadic window")
        flux = traj.flux()[:nframes]
        # independent centering estimate (fresh noise stream, long enough
        # for the batch-means error bars even at the smallest scale)
        mean_mc = MCParams(seed=mc.seed, burn_in=mc.burn_in,
                           horizon=max(horizon, 128.0 * stride_time),
                           record_stride=stride, dt=dt,
                           stream=mc.stream + 101)
        mean_flux, mean_se = surface_tension_gradient(spec, grid, p, mean_mc)
        centered = flux - mean_flux
        func = multiscale_poincare_vector(centered, q, n_scale, d)
        # stationarity diagnostic: spatially averaged flux over the two
        # window halves, in combined-stderr units
        half = nframes // 2
        m1 = flux[:half].mean(axis=(0, 1))
        m2 = flux[half:].mean(axis=(0, 1))
        halves_se = np.std(flux.mean(axis=1), axis=0, ddof=1) \
            / np.sqrt(max(half, 1))
        stat_z = float(np.max(np.abs(m1 - m2)
                              / (np.sqrt(2.0) * halves_se + 1e-30)))
        var_by_scale = {}
        for m in range(n_scale + 1):
            comp_vars = []
            for i in range(d):
                av = cylinder_averages(centered[:, :, i], n_scale, m, d)
                comp_vars.append(float(av.var()))
            var_by_scale[m] = float(np.sum(comp_vars))
        rows.append({
            "n_scale": n_scale, "side": side,
            "functional": float(func), "ratio": float(func / side),
            "mean_flux": mean_flux, "mean_flux_stderr": mean_se,
            "cylinder_variance": var_by_scale,
            "stationarity_z": stat_z,
        })
    return rows
