"""Linear discrete parabolic solver in time-dependent SPD environments.

Solves du/dt = div(a(t,x) (lam + grad u)) + F with explicit Euler.  The
environment is piecewise constant between recorded frames (matching how
the dynamics module records it) and steps are subdivided adaptively
whenever dt * max(2d * Lambda_plus) / scale^2 exceeds the stability
margin.  No maximum principle is assumed anywhere.
"""

from dataclasses import dataclass

import numpy as np

from . import core
from .lattice import TorusGrid, gradient

__all__ = ["Environment", "NonFinite", "heat_kernel", "solve_linear_parabolic",
           "energy_series", "caccioppoli_ratio"]

CFL_MARGIN = 0.5


class NonFinite(RuntimeError):
    """The explicit solve produced NaN/Inf even after maximum subdivision."""


class ZeroDenominator(RuntimeError):
    pass


@dataclass
class Environment:
    """Time-dependent site-wise SPD matrix field, piecewise constant between
    frames.  mats has shape (nframes, nsites, d, d); times are the frame
    start times (sorted)."""

    grid: TorusGrid
    times: np.ndarray
    mats: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.mats = np.ascontiguousarray(self.mats, dtype=np.float64)
        if self.mats.ndim != 4 or self.mats.shape[1] != self.grid.nsites:
            raise ValueError("mats must have shape (nframes, nsites, d, d)")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("frame times must be strictly increasing")

    def validate_spd(self, tol=1e-10):
        if not np.allclose(self.mats, np.swapaxes(self.mats, 2, 3), atol=tol):
            raise ValueError("environment matrices must be symmetric")
        eigs = np.linalg.eigvalsh(self.mats)
        if eigs.min() < -tol:
            raise ValueError(f"environment not PSD: min eig {eigs.min():g}")
        return self

    @classmethod
    def constant(cls, grid, mat, t0=0.0, t1=np.inf):
        mats = np.broadcast_to(mat, (1, grid.nsites, grid.d, grid.d)).copy()
        return cls(grid, np.array([t0]), mats)

    @classmethod
    def identity(cls, grid, t0=0.0):
        return cls.constant(grid, np.eye(grid.d), t0)

    def frame_at(self, t):
        j = np.searchsorted(self.times, t, side="right") - 1
        return int(np.clip(j, 0, len(self.times) - 1))

    def max_lambda_plus(self):
        key = getattr(self, "_max_lp", None)
        if key is None:
            self._max_lp = float(np.linalg.eigvalsh(self.mats).max())
        return self._max_lp


def _stable_dt(env, dt):
    lp = max(env.max_lambda_plus(), 1e-30)
    limit = CFL_MARGIN * env.grid.scale ** 2 / (2.0 * env.grid.d * lp)
    return min(dt, limit)


def _advance(u, env, t0, t1, dt, lam, forcing):
    """March u from t0 to t1; env frozen per env-frame; forcing(t) held
    constant over each accepted step.  Yields (t, u) after every step."""
    grid = env.grid
    plus, minus = grid._tables()
    lam = np.zeros(grid.d) if lam is None else np.asarray(lam, dtype=np.float64)
    dt_cap = _stable_dt(env, dt)
    t = t0
    while t < t1 - 1e-14:
        j = env.frame_at(t)
        seg_end = env.times[j + 1] if j + 1 < len(env.times) else np.inf
        seg_end = min(seg_end, t1)
        nsteps = max(1, int(np.ceil((seg_end - t) / dt_cap - 1e-12)))
        h = (seg_end - t) / nsteps
        a = env.mats[j]
        for _ in range(nsteps):
            f = forcing(t) if forcing is not None else None
            core.parabolic_block(u, a, lam, h, 1.0 / grid.scale, 1, f,
                                 plus, minus)
            t += h
            yield t, u
        t = seg_end


def solve_linear_parabolic(env, init, forcing=None, t0=0.0, T=1.0, dt=1e-2,
                           lam=None, record_every=1, stop_below_l2=None):
    """Explicit-Euler solve of du/dt = div(a (lam + grad u)) + F.

    forcing : callable t -> (nsites,) array, or None.
    Returns (times, frames) with frames[0] = init at t0 and one frame per
    ``record_every`` accepted steps (the final time is always recorded).
    stop_below_l2 terminates the march early once the solution's L2 norm
    falls below the threshold (useful for decaying kernels).
    """
    u = np.array(init, dtype=np.float64, copy=True)
    times = [t0]
    frames = [u.copy()]
    count = 0
    last_t = t0
    for t, state in _advance(u, env, t0, T, dt, lam, forcing):
        count += 1
        last_t = t
        if count % record_every == 0:
            times.append(t)
            frames.append(state.copy())
            if (stop_below_l2 is not None
                    and np.linalg.norm(state) < stop_below_l2):
                break
    if times[-1] != last_t and last_t > t0:
        times.append(last_t)
        frames.append(u.copy())
    if not np.isfinite(frames[-1]).all():
        raise NonFinite("parabolic solve diverged; decrease dt")
    return np.array(times), np.array(frames)


def heat_kernel(env, s, y, T, dt=1e-2, record_every=1, stop_below_l2=None):
    """Heat kernel started from site y at time s: initial condition
    delta_y - 1/nsites, evolved by the unforced equation.  For t < s the
    kernel is zero by convention (not materialized here).
    """
    grid = env.grid
    init = np.full(grid.nsites, -1.0 / grid.nsites)
    init[y] += 1.0
    return solve_linear_parabolic(env, init, None, s, T, dt,
                                  record_every=record_every,
                                  stop_below_l2=stop_below_l2)


def energy_series(times, frames, env, lam=None):
    """Per-frame energy E_t = sum u^2 and dissipation D_t = sum grad u . a
    grad u, plus the worst violation of E_{t+dt} - E_t = -2 dt D_t
    (relative to E_0, forward differences)."""
    grid = env.grid
    lam = np.zeros(grid.d) if lam is None else np.asarray(lam)
    E = np.array([(f ** 2).sum() for f in frames])
    D = np.empty(len(frames))
    for k, (t, f) in enumerate(zip(times, frames)):
        a = env.mats[env.frame_at(t)]
        g = gradient(f, grid) + lam[:, None]
        D[k] = np.einsum("ix,xij,jx->", g, a, g)
    scale = max(E[0], 1e-30)
    viol = 0.0
    for k in range(len(frames) - 1):
        dt = times[k + 1] - times[k]
        viol = max(viol, abs(E[k + 1] - E[k] + 2.0 * dt * D[k]) / scale)
    return E, D, viol


def _box_sites(grid, center, half_width):
    """Linear indices of the sup-norm box of given half-width around center
    (periodic); side 2*half_width+1, capped at the torus."""
    n, d = grid.n, grid.d
    w = min(half_width, (n - 1) // 2)
    offsets = np.arange(-w, w + 1)
    grids = np.meshgrid(*([offsets] * d), indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=-1) + np.asarray(center)
    return grid.site_index(coords)


def residual_norm(times, frames, env, lam=None):
    """Max norm of (u_{k+1}-u_k)/dt - div(a (lam + grad u_k)) over frames;
    zero (to fp) when the frames come from this module's own solver at
    full resolution."""
    grid = env.grid
    plus, minus = grid._tables()
    lam = np.zeros(grid.d) if lam is None else np.asarray(lam)
    worst = 0.0
    for k in range(len(frames) - 1):
        dt = times[k + 1] - times[k]
        a = env.mats[env.frame_at(times[k])]
        u = frames[k].copy()
        core.parabolic_block(u, a, lam, dt, 1.0 / grid.scale, 1, None,
                             plus, minus)
        worst = max(worst, np.abs(u - frames[k + 1]).max())
    return worst


def caccioppoli_ratio(times, frames, env, L, center=None, lam_plus_field=None,
                      check_residual=True):
    """Energy ratio witnessing the parabolic Caccioppoli inequality.

    ratio = [int_{Q_L} grad u . a grad u] / [(1/L^2) int_{Q_{2L}}
    Lambda_plus |u|^2], with Q_L the last L^2 time units on the box of
    half-width L and Q_{2L} the last 4L^2 units on the box of half-width
    2L.  The solution must solve the unforced equation on the large
    cylinder (residual < 1e-8).
    """
    grid = env.grid
    center = (0,) * grid.d if center is None else center
    t_end = times[-1]
    if t_end - times[0] < 4.0 * L * L - 1e-9:
        raise ValueError("series must cover at least 4 L^2 time units")
    if check_residual:
        res = residual_norm(times, frames, env)
        if res > 1e-8:
            raise ValueError(f"input does not solve the equation: residual {res:g}")
    inner = _box_sites(grid, center, L)
    outer = _box_sites(grid, center, 2 * L)

    def _time_integral(vals, t_lo):
        sel = times >= t_lo - 1e-12
        tt, vv = times[sel], vals[sel]
        return np.trapezoid(vv, tt)

    num_t = np.empty(len(frames))
    den_t = np.empty(len(frames))
    for k, (t, f) in enumerate(zip(times, frames)):
        a = env.mats[env.frame_at(t)]
        g = gradient(f, grid)
        dens = np.einsum("ix,xij,jx->x", g, a, g)
        num_t[k] = dens[inner].sum()
        if lam_plus_field is None:
            lp = np.maximum(np.linalg.eigvalsh(a).max(axis=-1), 1.0)
        else:
            lp = lam_plus_field[k]
        den_t[k] = (lp[outer] * f[outer] ** 2).sum()
    num = _time_integral(num_t, t_end - L * L)
    den = _time_integral(den_t, t_end - 4.0 * L * L) / (L * L)
    if den == 0.0:
        if num == 0.0:
            return 0.0
        raise ZeroDenominator("u vanishes on the outer cylinder")
    return num / den
