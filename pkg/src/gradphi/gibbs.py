"""Gibbs-measure estimators: surface tension, its derivatives, tails, and
the tiny-torus quadrature ground truth.

The only sampler is the Langevin chain (its invariance is the validated
property); the independent ground truth is tensor quadrature of the Gibbs
density over the mean-zero hyperplane, feasible on tiny tori.

Conventions.  The finite-volume surface tension is

    sigma_L(p) = -(1/nsites) ln(Z_{L,p} / Z_{L,0}),    sigma_L(0) = 0,

which is nonnegative and convex (the quadratic potential gives exactly
|p|^2/2); its gradient is the mean tilted flux E[DV(p + grad phi)].
"""

from dataclasses import dataclass, replace

import numpy as np

from .dynamics import linearized_dynamics, simulate_stationary
from .parabolic import heat_kernel
from .potential import flux as potential_flux
from .potential import potential_value

__all__ = ["MCParams", "InsufficientSamples", "EmptyTail",
           "TruncationInsufficient", "HorizonTooShort",
           "surface_tension_gradient", "surface_tension_value",
           "surface_tension_hessian", "quadrature_oracle",
           "gradient_tail_report", "hs_variance_check"]


class InsufficientSamples(RuntimeError):
    pass


class EmptyTail(RuntimeError):
    pass


class TruncationInsufficient(RuntimeError):
    pass


class HorizonTooShort(RuntimeError):
    pass


@dataclass(frozen=True)
class MCParams:
    """Knobs of a stationary sampling run."""
    seed: int = 0
    burn_in: float = None     # None: dynamics default 20 n^2
    horizon: float = None     # None: dynamics default 10 n^2
    record_stride: int = None
    dt: float = None
    n_batches: int = 20
    stream: int = 0

    def run(self, spec, grid, p):
        return simulate_stationary(
            spec, grid, p, seed=self.seed, burn_in=self.burn_in,
            horizon=self.horizon, record_stride=self.record_stride,
            dt=self.dt, stream=self.stream)


def batch_means(series, n_batches=20):
    """(mean, stderr) by batch means over time blocks; series is (F,) or
    (F, k)."""
    series = np.asarray(series)
    if len(series) < n_batches:
        raise InsufficientSamples(
            f"{len(series)} frames < {n_batches} batches")
    blocks = np.array_split(series, n_batches, axis=0)
    bm = np.stack([b.mean(axis=0) for b in blocks])
    return bm.mean(axis=0), bm.std(axis=0, ddof=1) / np.sqrt(n_batches)


def surface_tension_gradient(spec, grid, p, mc=MCParams(), traj=None):
    """Ergodic estimate of D sigma_L(p) = E[DV(p + grad phi)].

    Returns (gradient, stderr) as (d,) arrays; errors by batch means over
    mc.n_batches time blocks.
    """
    p = np.asarray(p, dtype=np.float64)
    if traj is None:
        traj = mc.run(spec, grid, p)
    flux_series = traj.flux().mean(axis=1)      # (F, d) spatial averages
    return batch_means(flux_series, mc.n_batches)


def surface_tension_value(spec, grid, p, n_integration_nodes=8, mc=MCParams()):
    """Thermodynamic integration sigma_L(p) = int_0^1 p . D sigma_L(s p) ds
    by Gauss-Legendre in s; each node is an independent stationary run.

    Returns (value, stderr).
    """
    p = np.asarray(p, dtype=np.float64)
    if n_integration_nodes < 2:
        raise ValueError("need at least 2 integration nodes")
    if not np.any(p):
        return 0.0, 0.0
    nodes, weights = np.polynomial.legendre.leggauss(n_integration_nodes)
    s_nodes = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    val, var = 0.0, 0.0
    for i, (s, wi) in enumerate(zip(s_nodes, w)):
        node_mc = replace(mc, stream=mc.stream + i + 1)
        g, se = surface_tension_gradient(spec, grid, s * p, node_mc)
        val += wi * float(p @ g)
        var += wi ** 2 * float((p ** 2) @ (se ** 2))
    return val, np.sqrt(var)


def surface_tension_hessian(spec, grid, p, lam, mc=MCParams(), traj=None):
    """Quadratic form (lam, D^2 sigma_L(p) lam) from the linearized dynamic.

    Averages lam . a (lam + grad w) over the stationary second half of the
    linearized solve; cross-checked against the symmetric form
    (lam + grad w) . a (lam + grad w).  Returns a dict with both estimates,
    their stderrs, and the pair discrepancy.
    """
    p = np.asarray(p, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if traj is None:
        traj = mc.run(spec, grid, p)
    _, _, func, sym = linearized_dynamics(traj, lam)
    half = len(func) // 2
    est, se = batch_means(func[half:], mc.n_batches)
    sym_est, sym_se = batch_means(sym[half:], mc.n_batches)
    return {
        "value": float(est), "stderr": float(se),
        "sym_value": float(sym_est), "sym_stderr": float(sym_se),
        "pair_discrepancy": float(abs(est - sym_est)),
    }


def _mean_zero_basis_configs(coords, n_total):
    """Embed free coordinates (M, n_total-1) into mean-zero fields
    (M, n_total): the last site carries minus the sum."""
    M = coords.shape[0]
    out = np.empty((M, n_total))
    out[:, :-1] = coords
    out[:, -1] = -coords.sum(axis=1)
    return out


def _config_slopes(grid, p, phi_configs):
    plus, _ = grid._tables()
    M = phi_configs.shape[0]
    slopes = np.empty((M, grid.nsites, grid.d))
    for i in range(grid.d):
        slopes[:, :, i] = (phi_configs[:, plus[i]] - phi_configs) / grid.scale
    slopes += np.asarray(p, dtype=np.float64)
    return slopes


def _config_energy(spec, grid, p, phi_configs):
    """sum_x V(p + grad phi(x)) for a batch of configurations (M, nsites)."""
    return potential_value(spec, _config_slopes(grid, p, phi_configs)).sum(axis=1)


def quadrature_oracle(spec, grid, p, rtol=1e-7,
                      node_budget=2 ** 21, tail_tol=1e-12):
    """Ground-truth Gibbs expectations by tensor Gauss-Legendre quadrature
    over the mean-zero hyperplane (dimension nsites - 1 <= 8).

    Returns a dict with Z_ratio = Z_p/Z_0, sigma, Dp_sigma, var_phi0.
    The truncation box is grown until the boundary shell carries less than
    tail_tol of the mass (TruncationInsufficient otherwise); the node count
    doubles until sigma and var stabilize to rtol.  Cost is nodes^dim:
    practical for dim <= 4 (quadratic potentials converge spectrally; the
    degenerate family is C^2 at the flat-ball boundary, so expect algebraic
    convergence and prefer rtol >= 1e-7).
    """
    p = np.asarray(p, dtype=np.float64)
    dim = grid.nsites - 1
    if dim > 8:
        raise ValueError("quadrature oracle limited to nsites - 1 <= 8")

    def _element(spec_, p_, R, n_nodes):
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        x = R * x
        w = R * w
        grids = np.meshgrid(*([x] * dim), indexing="ij")
        coords = np.stack([g.ravel() for g in grids], axis=-1)
        phi = _mean_zero_basis_configs(coords, grid.nsites)
        energy = _config_energy(spec_, grid, p_, phi)
        wgrids = np.meshgrid(*([w] * dim), indexing="ij")
        wgrid = np.ones(coords.shape[0])
        for g in wgrids:
            wgrid *= g.ravel()
        dens = np.exp(-energy)
        mass = float((wgrid * dens).sum())
        # boundary shell mass for the truncation check
        shell = (np.abs(coords) > 0.9 * R).any(axis=1)
        shell_mass = float((wgrid[shell] * dens[shell]).sum())
        # observables under the p-tilted measure
        DV = potential_flux(spec_, _config_slopes(grid, p_, phi)).mean(axis=1)
        grad = (wgrid[:, None] * dens[:, None] * DV).sum(axis=0) / mass
        m1 = float((wgrid * dens * phi[:, 0]).sum()) / mass
        m2 = float((wgrid * dens * phi[:, 0] ** 2).sum()) / mass
        return mass, shell_mass, grad, m2 - m1 ** 2

    # truncation radius from the energy profile along a coordinate axis
    R = max(2.0, 4.0 * np.sqrt(grid.nsites))
    for _ in range(8):
        probe = np.zeros((1, dim))
        probe[0, 0] = R
        e_edge = _config_energy(spec, grid, p,
                                _mean_zero_basis_configs(probe, grid.nsites))
        e0 = _config_energy(spec, grid, p,
                            _mean_zero_basis_configs(np.zeros((1, dim)),
                                                     grid.nsites))
        if e_edge[0] - e0[0] > -np.log(tail_tol) + 10.0:
            break
        R *= 1.5

    n_nodes = 32
    prev = None
    while True:
        if n_nodes ** dim > node_budget:
            raise TruncationInsufficient(
                f"node budget exceeded at {n_nodes}^{dim}")
        Zp, shell_p, grad, var = _element(spec, p, R, n_nodes)
        Z0, shell_0, _, _ = _element(spec, np.zeros(grid.d), R, n_nodes)
        if max(shell_p / Zp, shell_0 / Z0) > tail_tol:
            R *= 1.4
            continue
        sigma = -np.log(Zp / Z0) / grid.nsites
        if prev is not None:
            ds = abs(sigma - prev[0]) / max(abs(sigma), 1e-12)
            dv = abs(var - prev[1]) / max(abs(var), 1e-12)
            if ds < rtol and dv < rtol:
                break
        prev = (sigma, var)
        n_nodes *= 2
    return {
        "Z_ratio": Zp / Z0, "sigma": float(sigma),
        "Dp_sigma": grad, "var_phi0": float(var),
        "nodes": n_nodes, "radius": R,
    }


def gradient_tail_report(traj, K_grid, exponent=None):
    """Empirical exceedance table of |grad phi| pooled over sites, frames.

    Regresses log P[|grad phi| >= K] against K^r (r = the potential growth
    exponent unless overridden) and reports slope, intercept, R^2.
    """
    gn = np.linalg.norm(traj.grad(), axis=1).ravel()
    K_grid = np.asarray(K_grid, dtype=np.float64)
    tails = np.array([(gn >= K).mean() for K in K_grid])
    if tails[0] == 0.0:
        raise EmptyTail("no exceedances at the smallest K")
    keep = tails > 0
    K, t = K_grid[keep], tails[keep]
    r = traj.spec.growth_exponent if exponent is None else exponent
    xs, ys = K ** r, np.log(t)
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    ss_tot = ((ys - ys.mean()) ** 2).sum()
    r2 = 1.0 - (resid ** 2).sum() / ss_tot if ss_tot > 0 else 1.0
    return {
        "K": K, "tail": t, "exponent": r,
        "slope": float(slope), "intercept": float(intercept),
        "r_squared": float(r2),
    }


def hs_variance_check(spec, grid, p, mc=MCParams(), n_starts=8,
                      decay_tol=1e-8, site=0, traj=None, hk_dt=None):
    """Compare Var[phi(site)] measured directly along the trajectory with
    the representation-formula value E[int_0^inf P_a(t, site; 0, site) dt]
    computed in the recorded environment.

    The kernel is integrated from each of n_starts well-separated start
    frames until its L2 norm falls below decay_tol (HorizonTooShort if the
    recorded environment ends first).  The kernel runs at the trajectory's
    own step size by default, so the leading time-discretization bias of
    the two sides matches.  Returns a dict with both values and stderrs.
    """
    if traj is None:
        traj = mc.run(spec, grid, p)
    env = traj.environment()
    var_series = (traj.phi ** 2).mean(axis=1)    # E[phi]=0 by projection
    var_direct, var_direct_se = batch_means(var_series, mc.n_batches)

    t0, t1 = traj.times[0], traj.times[-1]
    starts = np.linspace(t0, t0 + 0.5 * (t1 - t0), n_starts)
    dt = traj.dt if hk_dt is None else hk_dt
    vals = []
    for s in starts:
        times, frames = heat_kernel(env, s, site, T=t1, dt=dt,
                                    stop_below_l2=decay_tol)
        norms = np.linalg.norm(frames, axis=1)
        cut = np.nonzero(norms < decay_tol)[0]
        if cut.size == 0:
            raise HorizonTooShort(
                f"kernel norm {norms[-1]:.2e} > {decay_tol} at the end of "
                "the recorded environment; lengthen the horizon")
        k = cut[0] + 1
        vals.append(np.trapezoid(frames[:k, site], times[:k]))
    vals = np.asarray(vals)
    var_hk = vals.mean()
    var_hk_se = vals.std(ddof=1) / np.sqrt(len(vals))
    return {
        "var_direct": float(var_direct), "var_direct_stderr": float(var_direct_se),
        "var_hk": float(var_hk), "var_hk_stderr": float(var_hk_se),
        "discrepancy": float(abs(var_hk - var_direct)),
        "per_start": vals,
    }
