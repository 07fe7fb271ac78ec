"""Pure-numpy stepping kernels (fallback backend).

Mirrors the API of the compiled extension _core_cy.  Both backends consume
identical noise arrays (generated by gradphi.rng), so trajectories agree
across backends up to floating-point summation order.
"""

import numpy as np

BACKEND = "python"

POT_QUADRATIC = 0
POT_DEGENERATE_RADIAL = 1


def _flux(pot_code, c, r, R0, v):
    """DV applied row-wise to slopes v of shape (d, nsites)."""
    if pot_code == POT_QUADRATIC:
        return c * v
    t = np.sqrt((v * v).sum(axis=0))
    s = t - R0
    active = s > 0.0
    coef = np.zeros_like(t)
    if r == 3.0:
        np.multiply(s, s, out=coef, where=active)
    elif r == 4.0:
        coef[active] = s[active] ** 3
    else:
        coef[active] = s[active] ** (r - 1.0)
    coef *= c * r
    with np.errstate(invalid="ignore", divide="ignore"):
        coef = np.where(active, coef / np.where(active, t, 1.0), 0.0)
    return coef * v


def langevin_block(phi, p, noise, dt, inv_scale, bmax, pot_code, c, r, R0,
                   project, plus, minus):
    """Advance the Langevin state through noise.shape[0] tamed Euler steps.

    phi : (nsites,) state, modified in place and returned.
    p : (d,) tilt slope.
    noise : (nsteps, nsites) raw Brownian increments (std sqrt(dt)); they
        are mean-projected here when ``project`` is true.
    Returns phi.
    """
    nsteps = noise.shape[0]
    sqrt2 = np.sqrt(2.0)
    d = plus.shape[0]
    for k in range(nsteps):
        g = (phi[plus] - phi[None, :]) * inv_scale
        g += np.asarray(p, dtype=np.float64)[:, None]
        flux = _flux(pot_code, c, r, R0, g)
        b = np.zeros_like(phi)
        for i in range(d):
            b += flux[i] - flux[i][minus[i]]
        b *= inv_scale
        b /= 1.0 + (dt / bmax) * np.abs(b)
        xi = noise[k]
        if project:
            xi = xi - xi.mean()
        phi += dt * b + sqrt2 * xi
        if project:
            phi -= phi.mean()
    return phi


def parabolic_block(u, a, lam, dt, inv_scale, nsteps, forcing, plus, minus):
    """Advance u through nsteps of explicit Euler for
    du/dt = div(a (lam + grad u)) + forcing, with a frozen in time.

    a : (nsites, d, d); lam : (d,); forcing : (nsites,) or None.
    """
    d = plus.shape[0]
    lam = np.asarray(lam, dtype=np.float64)
    for _ in range(nsteps):
        g = (u[plus] - u[None, :]) * inv_scale
        g += lam[:, None]
        flux = np.einsum("xij,jx->ix", a, g)
        Lu = np.zeros_like(u)
        for i in range(d):
            Lu += flux[i] - flux[i][minus[i]]
        Lu *= inv_scale
        if forcing is not None:
            Lu = Lu + forcing
        u += dt * Lu
    return u
