"""Homogenized side: a tabulated mean-flux map and the discretized
nonlinear parabolic solver d/dt u = div_eps flux(grad_eps u).

The table stores flux = D sigma_L on a symmetric tensor grid of slopes and
interpolates it multilinearly (interpolating the flux directly, not sigma,
avoids amplifying Monte Carlo noise by differentiation).  The lattice
symmetry group (coordinate permutations and sign flips) fills the grid
from estimates on representative nodes, since the radial potential makes
the Gibbs measure equivariant.
"""

from dataclasses import dataclass, field
from itertools import permutations, product

import numpy as np

from .lattice import TorusGrid, gradient, divergence

__all__ = ["SurfaceTensionTable", "SlopeOutOfTable", "SymmetryViolation",
           "build_sigma_table", "solve_homogenized",
           "discretization_error_check", "identity_table"]


class SlopeOutOfTable(RuntimeError):
    pass


class SymmetryViolation(RuntimeError):
    pass


@dataclass
class SurfaceTensionTable:
    """Tabulated flux map on the tensor grid axis x ... x axis (d times).

    flux : (npts, ..., npts, d) node values of D sigma;
    stderr : same shape, per-component standard errors;
    axis : strictly increasing 1-d array of node coordinates (symmetric
    about 0).
    """

    d: int
    axis: np.ndarray
    flux: np.ndarray
    stderr: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=np.float64)
        self.flux = np.asarray(self.flux, dtype=np.float64)
        if self.stderr is None:
            self.stderr = np.zeros_like(self.flux)
        m = len(self.axis)
        if self.flux.shape != (m,) * self.d + (self.d,):
            raise ValueError("flux table shape does not match the axis")
        if np.any(np.diff(self.axis) <= 0):
            raise ValueError("axis must be strictly increasing")

    @property
    def p_max(self):
        return float(self.axis[-1])

    def __call__(self, slopes):
        """Multilinear interpolation; slopes (..., d) -> flux (..., d).
        Raises SlopeOutOfTable outside the grid."""
        q = np.asarray(slopes, dtype=np.float64)
        shape = q.shape
        q = q.reshape(-1, self.d)
        lo, hi = self.axis[0], self.axis[-1]
        if q.min() < lo - 1e-12 or q.max() > hi + 1e-12:
            worst = float(np.abs(q).max())
            raise SlopeOutOfTable(
                f"slope magnitude {worst:g} outside table range "
                f"[{lo:g}, {hi:g}]; rebuild with a larger p_max")
        # uniform-grid index arithmetic (axis is linspace by construction)
        h = self.axis[1] - self.axis[0]
        u = (q - lo) / h
        i0 = np.clip(np.floor(u).astype(np.intp), 0, len(self.axis) - 2)
        w = u - i0
        out = np.zeros_like(q)
        for corner in product((0, 1), repeat=self.d):
            cw = np.ones(len(q))
            idx = []
            for ax, c in enumerate(corner):
                cw = cw * (w[:, ax] if c else 1.0 - w[:, ax])
                idx.append(i0[:, ax] + c)
            out += cw[:, None] * self.flux[tuple(idx)]
        return out.reshape(shape)

    def max_jacobian(self):
        """Upper bound on the flux Jacobian from node finite differences
        (global bound used in the CFL estimate)."""
        h = self.axis[1] - self.axis[0]
        worst = 0.0
        for ax in range(self.d):
            diff = np.abs(np.diff(self.flux, axis=ax)).max()
            worst = max(worst, diff / h)
        return max(worst, 1e-12)

    def local_jacobian(self, slopes):
        """Jacobian bound restricted to the grid cells the given slopes
        visit (with one cell of margin)."""
        q = np.asarray(slopes, dtype=np.float64).reshape(-1, self.d)
        h = self.axis[1] - self.axis[0]
        lo_idx = np.clip(((q.min(axis=0) - self.axis[0]) / h).astype(int) - 1,
                         0, None)
        hi_idx = np.clip(((q.max(axis=0) - self.axis[0]) / h).astype(int) + 2,
                         None, len(self.axis) - 1)
        sl = tuple(slice(lo_idx[ax], hi_idx[ax] + 1) for ax in range(self.d))
        sub = self.flux[sl]
        worst = 0.0
        for ax in range(self.d):
            if sub.shape[ax] > 1:
                worst = max(worst, np.abs(np.diff(sub, axis=ax)).max() / h)
        return max(worst, 1e-12)

    def sigma_along(self, p, n_quad=16):
        """sigma(p) by thermodynamic integration of the interpolated flux
        along the ray from 0 to p."""
        p = np.asarray(p, dtype=np.float64)
        nodes, weights = np.polynomial.legendre.leggauss(n_quad)
        s = 0.5 * (nodes + 1.0)
        w = 0.5 * weights
        pts = s[:, None] * p[None, :]
        return float((w * (self(pts) @ p)).sum())

    def save(self, path):
        """Versioned text format: header lines then CSV body."""
        m = len(self.axis)
        with open(path, "w") as fh:
            fh.write("GPHI-SIGMA 1\n")
            fh.write(f"d {self.d}\n")
            fh.write(f"npts {m}\n")
            fh.write(f"p_max {self.p_max!r}\n")
            for k, v in sorted(self.meta.items()):
                fh.write(f"meta {k} {v}\n")
            cols = ([f"p{i}" for i in range(self.d)]
                    + [f"flux{i}" for i in range(self.d)]
                    + [f"err{i}" for i in range(self.d)])
            fh.write(",".join(cols) + "\n")
            grids = np.meshgrid(*([self.axis] * self.d), indexing="ij")
            coords = np.stack([g.ravel() for g in grids], axis=-1)
            fl = self.flux.reshape(-1, self.d)
            er = self.stderr.reshape(-1, self.d)
            for row in range(coords.shape[0]):
                vals = np.concatenate([coords[row], fl[row], er[row]])
                fh.write(",".join(f"{v:.17g}" for v in vals) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            magic = fh.readline().split()
            if magic[:1] != ["GPHI-SIGMA"]:
                raise ValueError("not a surface tension table file")
            d = npts = None
            meta = {}
            line = fh.readline()
            while line and not line.startswith(("p0", "flux")):
                parts = line.split()
                if parts[0] == "d":
                    d = int(parts[1])
                elif parts[0] == "npts":
                    npts = int(parts[1])
                elif parts[0] == "meta":
                    meta[parts[1]] = " ".join(parts[2:])
                line = fh.readline()
            body = np.loadtxt(fh, delimiter=",")
        body = np.atleast_2d(body)
        coords = body[:, :d]
        axis = np.unique(coords[:, 0])
        flux = body[:, d:2 * d].reshape((npts,) * d + (d,))
        err = body[:, 2 * d:3 * d].reshape((npts,) * d + (d,))
        return cls(d, axis, flux, err, meta)


def _signed_permutations(d):
    for perm in permutations(range(d)):
        for signs in product((1.0, -1.0), repeat=d):
            yield perm, np.array(signs)


def _canonical(node, tol=1e-12):
    """Representative of the symmetry orbit: absolute values sorted
    ascending."""
    return tuple(np.round(np.sort(np.abs(node)), 12))


def identity_table(d, p_max, npts=9):
    """Table of the identity flux map (the quadratic potential's
    D sigma(p) = p), exact under multilinear interpolation."""
    axis = np.linspace(-p_max, p_max, npts)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    flux = np.stack(grids, axis=-1)
    return SurfaceTensionTable(d, axis, flux,
                               meta={"kind": "identity"})


def build_sigma_table(spec, sample_grid, p_max, npts, mc, jobs=None,
                      verify_symmetry=0, ray_tol=3.0):
    """Estimate D sigma_L on the symmetric slope grid.

    Runs the gradient estimator once per symmetry-orbit representative and
    fills the orbit by equivariance (flux(S p) = S flux(p) for signed
    permutations S, exact for the rotation-invariant potential family).

    verify_symmetry > 0 re-estimates that many image nodes independently
    and raises SymmetryViolation beyond 5 combined stderr.  Ray
    monotonicity of p . flux(p) is checked against ray_tol * stderr and
    recorded in meta.  ``jobs`` optionally maps representatives to
    precomputed (flux, stderr) pairs (parallel build support).
    """
    from .gibbs import surface_tension_gradient

    d = sample_grid.d
    if npts % 2 == 0:
        raise ValueError("npts must be odd so the grid contains 0")
    axis = np.linspace(-p_max, p_max, npts)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=-1)

    reps = {}
    for node in coords:
        reps.setdefault(_canonical(node), np.array(node))
    estimates = {}
    for key in sorted(reps):
        rep = np.array(key)        # canonical: sorted absolute values
        if jobs is not None and key in jobs:
            estimates[key] = jobs[key]
        elif not np.any(rep):
            estimates[key] = (np.zeros(d), np.zeros(d))
        else:
            from dataclasses import replace
            node_mc = replace(mc, seed=mc.seed + hash(key) % 100003)
            estimates[key] = surface_tension_gradient(spec, sample_grid,
                                                      rep, node_mc)

    flux = np.zeros((len(coords), d))
    err = np.zeros((len(coords), d))
    for row, node in enumerate(coords):
        key = _canonical(node)
        g_rep, se_rep = estimates[key]
        rep = np.array(key)
        # find a signed permutation with node = signs * rep[perm]
        for perm, signs in _signed_permutations(d):
            if np.allclose(node, signs * rep[list(perm)], atol=1e-9):
                flux[row] = signs * g_rep[list(perm)]
                err[row] = se_rep[list(perm)]
                break
        else:
            raise RuntimeError("orbit mapping failed (grid not symmetric?)")

    table = SurfaceTensionTable(
        d, axis, flux.reshape((npts,) * d + (d,)),
        err.reshape((npts,) * d + (d,)),
        meta={"kind": "estimated", "potential": str(spec.to_dict()),
              "L": sample_grid.n, "seed": mc.seed},
    )

    if verify_symmetry > 0:
        rng = np.random.default_rng(mc.seed + 17)
        nonzero = [c for c in coords if np.any(c)]
        picks = rng.choice(len(nonzero), size=min(verify_symmetry,
                                                  len(nonzero)),
                           replace=False)
        from dataclasses import replace
        for pick in picks:
            node = nonzero[pick]
            direct, se_direct = surface_tension_gradient(
                spec, sample_grid, node,
                replace(mc, seed=mc.seed + 7919 + int(pick)))
            filled = table(node[None, :])[0]
            comb = np.sqrt(se_direct ** 2
                           + table.stderr.reshape(-1, d)[0] ** 2 + 1e-30)
            if np.any(np.abs(direct - filled) > 5 * (np.abs(comb) + 1e-12)):
                raise SymmetryViolation(
                    f"node {node}: direct {direct} vs filled {filled}")

    # ray monotonicity of p . flux(p) along grid rays through 0
    violations = 0
    center = npts // 2
    fl = table.flux
    for direction in coords[np.abs(coords).max(axis=1) == p_max]:
        if not np.any(direction):
            continue
        ts = np.linspace(0.0, 1.0, center + 1)
        pts = ts[:, None] * direction[None, :]
        vals = np.einsum("kj,j->k", table(pts), direction)
        ses = ray_tol * np.linalg.norm(err) / max(len(err), 1)
        if np.any(np.diff(vals) < -3 * (np.abs(ses) + 1e-12)):
            violations += 1
    table.meta["ray_monotonicity_violations"] = violations
    return table


def solve_homogenized(flux_map, f, eps, T=1.0, dt=None, record_times=None,
                      cfl_margin=0.5, refresh_every=64):
    """Explicit Euler for du/dt = div_eps flux(grad_eps u) on the mesh-eps
    torus.

    flux_map : SurfaceTensionTable or callable slopes (..., d) -> (..., d);
    f : initial values sampled on the torus, shape (n,)*d.
    The step size tracks the local Jacobian bound of the table on the
    slope range currently visited (refreshed every ``refresh_every``
    steps).  Returns (times, frames, grid).
    """
    f = np.asarray(f, dtype=np.float64)
    n = int(round(1.0 / eps))
    if abs(n * eps - 1.0) > 1e-12:
        raise ValueError("1/eps must be an integer")
    grid = TorusGrid(f.ndim, n, scale=eps)
    if f.shape != grid.shape:
        raise ValueError("initial condition must be sampled on the eps-torus")
    u = f.ravel().copy()
    d = grid.d

    is_table = isinstance(flux_map, SurfaceTensionTable)

    def _lam_bound():
        g = gradient(u, grid).T
        if is_table:
            return flux_map.local_jacobian(g)
        probe = max(np.abs(g).max(), 1.0)
        eh = 1e-4 * probe
        base = np.zeros((1, d))
        base[0, 0] = probe
        bumped = base.copy()
        bumped[0, 0] += eh
        return max(float(np.abs(np.asarray(flux_map(bumped))
                                - np.asarray(flux_map(base))).max() / eh),
                   1e-12)

    if record_times is None:
        record_times = np.linspace(0.0, T, 33)
    record_times = np.sort(np.asarray(record_times, dtype=np.float64))

    times_out = []
    frames_out = []
    t = 0.0
    rec_idx = 0
    if record_times[0] <= 1e-15:
        times_out.append(0.0)
        frames_out.append(u.copy())
        rec_idx = 1
    step_count = 0
    dt_cap = None
    while t < T - 1e-14:
        if dt_cap is None or step_count % refresh_every == 0:
            lam = max(_lam_bound(), 1e-12)
            dt_cap = cfl_margin * grid.scale ** 2 / (2.0 * d * lam)
            if dt is not None:
                dt_cap = min(dt_cap, dt)
        t_target = record_times[rec_idx] if rec_idx < len(record_times) else T
        t_target = min(t_target, T)
        h = min(dt_cap, t_target - t)
        g = gradient(u, grid)                     # (d, nsites)
        q = flux_map(g.T)                         # (nsites, d)
        u += h * divergence(np.asarray(q).T, grid)
        t += h
        step_count += 1
        if not np.isfinite(u).all():
            from .parabolic import NonFinite
            raise NonFinite("homogenized solve diverged")
        if rec_idx < len(record_times) and t >= record_times[rec_idx] - 1e-12:
            times_out.append(t)
            frames_out.append(u.copy())
            rec_idx += 1
    return np.array(times_out), np.array(frames_out), grid


def sample_on_torus(f_callable, d, eps):
    """Evaluate a function of continuum coordinates in [0,1)^d on the
    mesh-eps lattice; returns shape (n,)*d."""
    n = int(round(1.0 / eps))
    mesh = np.meshgrid(*[np.arange(n) * eps] * d, indexing="ij")
    return f_callable(np.stack(mesh, axis=-1))


def discretization_error_check(flux_map, f_callable, d, eps_list, T=1.0,
                               n_times=9):
    """L2 distance between coarse solutions and the finest-eps reference,
    evaluated at shared sites and times.

    The eps in eps_list must nest (every n divides the finest n); the
    finest entry serves as the reference.  Returns rows of
    {eps, l2_error}, coarse to fine.
    """
    eps_list = sorted(set(eps_list), reverse=True)
    times = np.linspace(0.0, T, n_times)
    runs = []
    for eps in eps_list:
        f0 = sample_on_torus(f_callable, d, eps)
        _, frames, grid = solve_homogenized(flux_map, f0, eps, T=T,
                                            record_times=times)
        runs.append((eps, grid, frames))
    eps_f, grid_f, frames_f = runs[-1]
    n_f = grid_f.n
    table = []
    for eps, grid, frames in runs[:-1]:
        if n_f % grid.n != 0:
            raise ValueError("eps grids must nest for the comparison")
        stride = n_f // grid.n
        coarse_idx = grid_f.site_index(grid.coordinates() * stride)
        err2 = np.mean([((frames[k] - frames_f[k][coarse_idx]) ** 2).mean()
                        for k in range(len(times))])
        table.append({"eps": eps, "l2_error": float(np.sqrt(err2))})
    return table
