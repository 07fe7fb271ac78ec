"""Langevin dynamics of the tilted interface and its linearization.

The stationary dynamic at slope p solves

    d phi = div DV(p + grad phi) dt + sqrt(2) dB~,

with mean-zero projected noise and mean-zero state; the drift grows like
|grad phi|^(r-1), so the explicit integrator uses sitewise taming with
bound B_max = 10/dt.  Stationarity from t = -infinity is approximated by a
burn-in (default 20 n^2 time units, the diffusive relaxation scale of the
torus); the quadratic-potential oracle in the test suite calibrates its
adequacy.

The rescaled system on the mesh-eps torus is the same stepping kernel with
scale = eps, unprojected noise, and mean not reprojected.
"""

from dataclasses import dataclass, field

import numpy as np

from . import core
from .lattice import TorusGrid, gradient
from .parabolic import Environment, NonFinite
from .potential import (PotentialSpec, flux, lambda_plus_field,
                        lambda_minus_field, potential_eval)
from .rng import BulkNormals, NoiseStream

__all__ = ["DynamicsState", "Trajectory", "step_langevin",
           "simulate_stationary", "simulate_rescaled", "linearized_dynamics",
           "brownian_derivative_check", "default_dt"]

TAMING_NUMERATOR = 10.0   # B_max = 10 / dt


def _noise_chunk(nsites):
    """Steps per noise-generation block: large enough that the vectorized
    counter RNG amortizes its call overhead even on tiny lattices."""
    return max(512, 65536 // max(nsites, 1))


def default_dt(spec, grid, p, slope_slack=4.0, margin=0.5):
    """Stability-driven step size: dt <= margin * scale^2 / (2 d Lambda+),
    with Lambda+ evaluated at |p| plus a fluctuation allowance."""
    probe = np.zeros(grid.d)
    probe[0] = np.linalg.norm(np.asarray(p, dtype=np.float64)) + slope_slack
    lp = float(lambda_plus_field(spec, probe[None, :])[0])
    return margin * grid.scale ** 2 / (2.0 * grid.d * lp)


@dataclass
class DynamicsState:
    grid: TorusGrid
    phi: np.ndarray
    time: float
    p: np.ndarray
    potential: PotentialSpec

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.phi.shape != (self.grid.nsites,):
            raise ValueError("phi must have one value per site")

    def mean_abs(self):
        return abs(self.phi.mean())


def step_langevin(state, noise_increment, dt, project=True):
    """One tamed Euler-Maruyama step in place.

    noise_increment : raw per-site Brownian increments (std sqrt(dt)); the
    mean is projected out here when ``project`` is true, and the state is
    re-projected to mean zero after the step.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    grid = state.grid
    plus, minus = grid._tables()
    spec = state.potential
    noise = np.ascontiguousarray(noise_increment, dtype=np.float64)[None, :]
    core.langevin_block(state.phi, state.p, noise, dt, 1.0 / grid.scale,
                        TAMING_NUMERATOR / dt, core.pot_code(spec),
                        spec.c, spec.r, spec.R0, project, plus, minus)
    if not np.isfinite(state.phi).all():
        raise NonFinite("Langevin step produced non-finite values; dt too large")
    state.time += dt
    return state


@dataclass
class Trajectory:
    """Recorded frames of a Langevin run.  Frames are time-correlated
    samples of the invariant measure (spacing record_stride * dt)."""

    grid: TorusGrid
    spec: PotentialSpec
    p: np.ndarray
    times: np.ndarray
    phi: np.ndarray           # (nframes, nsites)
    seed: int = 0
    dt: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def nframes(self):
        return len(self.times)

    def grad(self):
        """(nframes, d, nsites) discrete gradients."""
        if "grad" not in self._cache:
            plus, _ = self.grid._tables()
            g = (self.phi[:, plus] - self.phi[:, None, :]) / self.grid.scale
            self._cache["grad"] = g
        return self._cache["grad"]

    def slopes(self):
        """(nframes, nsites, d) local slopes p + grad phi."""
        if "slopes" not in self._cache:
            g = self.grad()
            self._cache["slopes"] = np.moveaxis(g, 1, 2) + self.p
        return self._cache["slopes"]

    def flux(self):
        """(nframes, nsites, d) flux DV(p + grad phi)."""
        if "flux" not in self._cache:
            self._cache["flux"] = flux(self.spec, self.slopes())
        return self._cache["flux"]

    def lam_plus(self):
        if "lp" not in self._cache:
            self._cache["lp"] = lambda_plus_field(self.spec, self.slopes())
        return self._cache["lp"]

    def lam_minus(self):
        if "lm" not in self._cache:
            self._cache["lm"] = lambda_minus_field(self.spec, self.slopes())
        return self._cache["lm"]

    def environment(self):
        """Piecewise-constant Environment a(t,x) = D2V(p + grad phi)."""
        if "env" not in self._cache:
            _, _, H = potential_eval(self.spec, self.slopes())
            self._cache["env"] = Environment(self.grid, self.times, H)
        return self._cache["env"]


def simulate_stationary(spec, grid, p, seed, burn_in=None, horizon=None,
                        record_stride=None, dt=None, phi0=None,
                        stream=0, sites=None):
    """Burn in the tilted Langevin dynamic and record stationary frames.

    Burn-in steps consume noise at negative step indices so the recording
    window always starts at step 0 regardless of burn-in length.  Returns
    a Trajectory with frames every record_stride steps over ``horizon``
    time units.
    """
    p = np.asarray(p, dtype=np.float64)
    if dt is None:
        dt = default_dt(spec, grid, p)
    if burn_in is None:
        burn_in = 20.0 * grid.n ** 2
    if horizon is None:
        horizon = 10.0 * grid.n ** 2
    n_burn = int(np.ceil(burn_in / dt))
    n_run = int(np.ceil(horizon / dt))
    if record_stride is None:
        record_stride = max(1, n_run // 200)

    noise = NoiseStream(seed, grid, dt, sites=sites, stream=stream)
    state = DynamicsState(grid, np.zeros(grid.nsites) if phi0 is None else phi0,
                          -burn_in, p, spec)
    plus, minus = grid._tables()
    args = (1.0 / grid.scale, TAMING_NUMERATOR / dt, core.pot_code(spec),
            spec.c, spec.r, spec.R0, True, plus, minus)

    # burn-in noise comes from the sequential bulk stream (it has a single
    # consumer and is not part of the recorded dynamics); every recorded
    # increment below stays counter-addressed by (seed, step, site)
    chunk = _noise_chunk(grid.nsites)
    bulk = BulkNormals(seed, stream=stream)
    sqrt_dt = np.sqrt(dt)
    k = -n_burn
    while k < 0:
        blk = min(chunk, -k)
        core.langevin_block(state.phi, p,
                            sqrt_dt * bulk.block(blk, noise.sites.size),
                            dt, *args)
        if not np.isfinite(state.phi).all():
            raise NonFinite("burn-in diverged; dt too large")
        k += blk

    nframes = n_run // record_stride
    times = np.empty(nframes)
    frames = np.empty((nframes, grid.nsites))
    chunk = max(chunk, record_stride)
    chunk -= chunk % record_stride
    j = 0
    while j < nframes:
        todo = min(chunk // record_stride, nframes - j)
        blk = noise.increment_block(k, todo * record_stride)
        for _ in range(todo):
            core.langevin_block(state.phi, p, blk[:record_stride], dt, *args)
            blk = blk[record_stride:]
            k += record_stride
            times[j] = k * dt
            frames[j] = state.phi
            j += 1
        if not np.isfinite(frames[j - 1]).all():
            raise NonFinite("trajectory diverged; dt too large")
    return Trajectory(grid, spec, p, times, frames, seed=seed, dt=dt)


def simulate_rescaled(spec, f_values, eps, seed, T=1.0, dt=None,
                      record_times=None, stream=0):
    """Rescaled dynamic on the mesh-eps torus started from f.

    du = div_eps DV(grad_eps u) dt + sqrt(2) dB_eps, with B_eps a standard
    Brownian motion per site (the diffusive rescaling of the microscopic
    noise).  The spatial mean performs a random walk; nothing is projected.
    Returns (times, frames) at the requested record_times (snapped to the
    step grid).
    """
    n = int(round(1.0 / eps))
    if abs(n * eps - 1.0) > 1e-12:
        raise ValueError("1/eps must be an integer")
    f_values = np.asarray(f_values, dtype=np.float64)
    grid = TorusGrid(f_values.ndim, n, scale=eps)
    if f_values.shape != grid.shape:
        raise ValueError("initial condition must be sampled on the eps-torus")
    u = f_values.ravel().copy()

    # gradient range the run will visit: initial slopes plus fluctuation
    g0 = gradient(u, grid)
    gmax = float(np.linalg.norm(g0, axis=0).max())
    if dt is None:
        dt = default_dt(spec, grid, np.zeros(grid.d), slope_slack=gmax + 4.0)
    if record_times is None:
        record_times = np.linspace(0.0, T, 33)
    record_times = np.asarray(record_times, dtype=np.float64)

    noise = NoiseStream(seed, grid, dt, stream=stream)
    plus, minus = grid._tables()
    args = (1.0 / grid.scale, TAMING_NUMERATOR / dt, core.pot_code(spec),
            spec.c, spec.r, spec.R0, False, plus, minus)
    p0 = np.zeros(grid.d)

    nsteps = int(np.ceil(T / dt - 1e-12))
    rec_steps = np.unique(np.clip(np.round(record_times / dt).astype(int),
                                  0, nsteps))
    frames = np.empty((len(rec_steps), grid.nsites))
    times = rec_steps * dt
    j = 0
    if rec_steps[0] == 0:
        frames[0] = u
        j = 1
    k = 0
    while k < nsteps:
        k_next = rec_steps[j] if j < len(rec_steps) else nsteps
        while k < k_next:
            blk = min(_noise_chunk(grid.nsites), k_next - k)
            core.langevin_block(u, p0, noise.increment_block(k, blk), dt, *args)
            k += blk
        if not np.isfinite(u).all():
            raise NonFinite("rescaled dynamic diverged; dt too large")
        if j < len(rec_steps):
            frames[j] = u
            j += 1
    return times, frames, grid


def linearized_dynamics(traj, lam, dt=None, w0=None):
    """Solve the linearized equation dw/dt = div a(t,x)(lam + grad w) in the
    environment recorded along ``traj`` (frozen between frames), starting
    from w = 0 at the first frame.

    Returns (times, w_frames, functional) where functional[k] is the
    space-averaged quadratic form lam . a (lam + grad w) at frame k, the
    stationary limit of which is the surface tension Hessian form.
    """
    lam = np.asarray(lam, dtype=np.float64)
    grid = traj.grid
    env = traj.environment()
    plus, minus = grid._tables()
    w = np.zeros(grid.nsites) if w0 is None else np.array(w0, dtype=np.float64)
    lp_max = max(float(traj.lam_plus().max()), 1.0)
    cap = 0.5 * grid.scale ** 2 / (2.0 * grid.d * lp_max)
    dt = cap if dt is None else min(dt, cap)

    times = traj.times
    w_frames = np.empty((len(times), grid.nsites))
    functional = np.empty(len(times))
    sym_functional = np.empty(len(times))
    for k in range(len(times)):
        if k > 0:
            span = times[k] - times[k - 1]
            nsub = max(1, int(np.ceil(span / dt - 1e-12)))
            core.parabolic_block(w, env.mats[k - 1], lam, span / nsub,
                                 1.0 / grid.scale, nsub, None, plus, minus)
            if not np.isfinite(w).all():
                raise NonFinite("linearized solve diverged")
        w_frames[k] = w
        a = env.mats[k]
        g = gradient(w, grid) + lam[:, None]
        functional[k] = np.einsum("i,xij,jx->", lam, a, g) / grid.nsites
        sym_functional[k] = np.einsum("ix,xij,jx->", g, a, g) / grid.nsites
    return times, w_frames, functional, sym_functional


def brownian_derivative_check(spec, grid, p, seed, window, site, bump,
                              T=None, dt=None, burn_in=None, n_quad=9):
    """Compare the finite-difference derivative of phi(T, .) with respect
    to a Brownian increment against the heat-kernel prediction.

    window = (s, t): the increment X_{s,t}(site) is bumped by +-bump along
    the piecewise-linear ramp; the prediction is the ramp-normalized kernel
    integral sqrt(2)/(t-s) * int_s^t P_a(T, . ; s', site) ds' in the
    environment recorded along the unperturbed path (the 1/(t-s) is the
    slope of the ramp g_{s,t}).  Returns (fd, prediction, relative L2
    error).
    """
    if bump <= 0:
        raise ValueError("bump must be > 0")
    s, t = window
    if not s < t:
        raise ValueError("window must satisfy s < t")
    p = np.asarray(p, dtype=np.float64)
    if dt is None:
        dt = default_dt(spec, grid, p)
    if T is None:
        T = t + (t - s)
    if burn_in is None:
        burn_in = 20.0 * grid.n ** 2
    n_burn = int(np.ceil(burn_in / dt))
    nsteps = int(np.ceil(T / dt - 1e-12))
    k_s, k_t = int(round(s / dt)), int(round(t / dt))

    noise = NoiseStream(seed, grid, dt)
    plus, minus = grid._tables()
    args = (1.0 / grid.scale, TAMING_NUMERATOR / dt, core.pot_code(spec),
            spec.c, spec.r, spec.R0, True, plus, minus)

    def _run(eps_bump, record_env):
        phi = np.zeros(grid.nsites)
        chunk = _noise_chunk(grid.nsites)
        bulk = BulkNormals(seed)
        sqrt_dt = np.sqrt(dt)
        for k0 in range(-n_burn, 0, chunk):
            blk = min(chunk, -k0)
            core.langevin_block(phi, p, sqrt_dt * bulk.block(blk, grid.nsites),
                                dt, *args)
        env_mats = (np.empty((nsteps, grid.nsites, grid.d, grid.d))
                    if record_env else None)
        ramp_rate = dt / (t - s)     # increment of g_{s,t} per step in window
        delta = np.full(grid.nsites, -1.0 / grid.nsites)
        delta[site] += 1.0
        for k in range(nsteps):
            if record_env:
                g = gradient(phi, grid)
                _, _, H = potential_eval(spec, (g + p[:, None]).T)
                env_mats[k] = H
            xi = noise.increment(k)
            if eps_bump != 0.0 and k_s <= k < k_t:
                xi = xi + eps_bump * ramp_rate * delta
            core.langevin_block(phi, p, xi[None, :], dt, *args)
        if not np.isfinite(phi).all():
            raise NonFinite("perturbed run diverged")
        return phi, env_mats

    _, env_mats = _run(0.0, True)
    phi_plus, _ = _run(+bump, False)
    phi_minus, _ = _run(-bump, False)
    fd = (phi_plus - phi_minus) / (2.0 * bump)

    env = Environment(grid, np.arange(nsteps) * dt, env_mats)
    s_nodes = np.linspace(s, t, n_quad)
    wts = np.full(n_quad, (t - s) / (n_quad - 1))
    wts[0] *= 0.5
    wts[-1] *= 0.5
    pred = np.zeros(grid.nsites)
    from .parabolic import heat_kernel
    for s_node, wt in zip(s_nodes, wts):
        _, frames = heat_kernel(env, s_node, site, T, dt)
        pred += wt * frames[-1]
    pred *= np.sqrt(2.0) / (t - s)
    rel = np.linalg.norm(fd - pred) / max(np.linalg.norm(pred), 1e-300)
    return fd, pred, rel
