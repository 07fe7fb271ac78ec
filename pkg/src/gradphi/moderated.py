"""Moderated environment: time-averaged eigenvalue functionals restoring
effective ellipticity where the instantaneous environment degenerates.

Kernels:  k(t) = delta / (1+t)^4 and K(t) = k(t) + int_t^inf s k(s) ds,
with the closed form K(t) = delta [ (1+t)^-4 + (1+t)^-2 / 2 - (1+t)^-3 / 3 ],
so int_0^inf K = 2 delta / 3 and K(0) = 7 delta / 6.  delta is fixed by the
convolution constraint int_t^s' K_{s-t} K_{s'-s} ds <= K_{s'-t} (checked on
a log-spaced grid with a 2x safety factor) together with int K <= 1.

The moderated field of a slope-p trajectory is

  m(t,x) = P int_t^inf k_{P(s-t)} (lam-(s,x) ^ P)
           / [ (s-t)^-1 sum_{y~x} int_t^s (P + lam+(s',y)) ds' ] ds,

with P = (1+|p|)^(r-2); in the uniformly convex regime (both eigenvalue
fields constant equal to P) it collapses to delta/(12 d) exactly.  A
finite-horizon variant (time window split at its midpoint, integrating
away from the nearer boundary) serves the two-scale error analysis.
"""

from dataclasses import dataclass

import numpy as np

from .parabolic import residual_norm
from .lattice import gradient

__all__ = ["ModerationKernels", "choose_delta", "moderated_env",
           "moderated_env_finite", "moderated_tail_report",
           "moderation_ratio", "exit_time_experiment", "HorizonTooShort",
           "wilson_interval"]


class HorizonTooShort(RuntimeError):
    pass


class EmptyTail(RuntimeError):
    pass


def _k_shape(t):
    return (1.0 + t) ** -4


def _K_shape(t):
    t1 = 1.0 + t
    return t1 ** -4 + 0.5 * t1 ** -2 - t1 ** -3 / 3.0


@dataclass(frozen=True)
class ModerationKernels:
    delta: float

    def k(self, t):
        return self.delta * _k_shape(np.asarray(t, dtype=np.float64))

    def K(self, t):
        return self.delta * _K_shape(np.asarray(t, dtype=np.float64))

    def K_integral(self):
        """int_0^inf K = 2 delta / 3 in closed form."""
        return 2.0 * self.delta / 3.0

    def k_tail_integral(self, H):
        """int_H^inf k = delta / (3 (1+H)^3)."""
        return self.delta / (3.0 * (1.0 + H) ** 3)

    def convolution_margin(self, n_grid=200, t_max=1e4):
        """min over u of K(u) / int_0^u K(s) K(u-s) ds; the convolution
        constraint holds iff this is >= 1."""
        us = np.geomspace(1e-3, t_max, n_grid)
        worst = np.inf
        for u in us:
            s = np.linspace(0.0, u, n_grid)
            conv = np.trapezoid(self.K(s) * self.K(u - s), s)
            if conv > 0:
                worst = min(worst, self.K(u) / conv)
        return worst


_DELTA_CACHE = {}


def choose_delta(safety=2.0, n_grid=200):
    """Largest delta <= 1 satisfying both kernel constraints, by bisection;
    the convolution inequality is required with the given safety factor."""
    key = (safety, n_grid)
    if key in _DELTA_CACHE:
        return _DELTA_CACHE[key]
    # both sides scale: conv ~ delta^2, K ~ delta, so margin(delta) =
    # margin(1) / delta; the binding constraint is linear in delta
    margin_at_one = ModerationKernels(1.0).convolution_margin(n_grid)
    delta = min(1.0, margin_at_one / safety, 1.5)   # int K <= 1 gives 3/2
    lo, hi = 0.0, delta
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        ok = (ModerationKernels(mid).convolution_margin(n_grid) >= safety
              and 2.0 * mid / 3.0 <= 1.0)
        if ok:
            lo = mid
        else:
            hi = mid
    _DELTA_CACHE[key] = lo
    return lo


def _neighbor_lambda_sum(lamp, grid):
    """sum over the 2d neighbors y ~ x of lam+(., y); lamp is (F, n)."""
    plus, minus = grid._tables()
    out = np.zeros_like(lamp)
    for i in range(grid.d):
        out += lamp[:, plus[i]] + lamp[:, minus[i]]
    return out


def _k_panel_integrals(v0, v1):
    """Exact (int k-shape, int u * k-shape) over [v0, v1] with the
    substitution w = 1 + u; removes the h^2 error the sharp kernel would
    produce under a plain trapezoid rule."""
    w0, w1 = 1.0 + v0, 1.0 + v1
    J0 = (w0 ** -3 - w1 ** -3) / 3.0
    prim = lambda w: -0.5 * w ** -2 + w ** -3 / 3.0   # int (w-1) w^-4 dw
    J1 = prim(w1) - prim(w0)
    return J0, J1


def _moderation_core(times, lamm, lamp_nbr, j0, rate, cap, add_const, d,
                     j_end=None, kernels=None):
    """Evaluate the moderation integral from frame j0 forward to j_end
    (exclusive end defaults to the last frame).

    The ratio field is interpolated linearly between frames and integrated
    against the analytic kernel exactly per panel, so constant eigenvalue
    fields reproduce the closed form to machine precision.

    rate : the kernel time-rescaling (P or 1/eps^2);
    cap : numerator cap; add_const : additive constant in the denominator.
    Returns (m values (n,), certified tail bound)."""
    if kernels is None:
        kernels = ModerationKernels(choose_delta())
    j_end = len(times) if j_end is None else j_end
    ts = times[j0:j_end] - times[j0]
    if len(ts) < 2:
        raise HorizonTooShort("need at least two frames ahead of the start")
    lm = np.minimum(lamm[j0:j_end], cap)
    A = 2 * d * add_const + lamp_nbr[j0:j_end]     # (F', n)
    # running time-average of A from the start frame
    m_cum = np.concatenate([
        np.zeros((1, A.shape[1])),
        np.cumsum(0.5 * (A[1:] + A[:-1]) * np.diff(ts)[:, None], axis=0),
    ])
    with np.errstate(divide="ignore", invalid="ignore"):
        avg = np.where(ts[:, None] > 0, m_cum / np.where(ts[:, None] > 0,
                                                         ts[:, None], 1.0),
                       A)                           # limit s -> t: A(t)
    g = lm / avg                                    # ratio field per frame
    v = rate * ts                                   # kernel time variable
    J0, J1 = _k_panel_integrals(v[:-1], v[1:])
    dv = np.diff(v)
    g0, g1 = g[:-1], g[1:]
    slope = (g1 - g0) / dv[:, None]
    # int over panel of k(v) (g0 + slope (v - v_left))
    panel = J0[:, None] * (g0 - slope * v[:-1, None]) + J1[:, None] * slope
    m_vals = kernels.delta * panel.sum(axis=0)
    # certified tail: numerator <= cap, denominator >= 2 d (add_const + 1);
    # the rate cancels under v = rate (s - t)
    H = ts[-1]
    tail = (cap / (2 * d * (add_const + 1.0))) * kernels.k_tail_integral(rate * H)
    return m_vals, tail


def moderated_env(traj, horizon=None, truncation_tail_tol=1e-6,
                  eval_frames=None, kernels=None):
    """Moderated environment field along a stationary trajectory.

    Evaluates m at the requested frames (default: all frames whose forward
    window of length ``horizon`` fits inside the recorded trajectory).
    Raises HorizonTooShort if the certified truncation bound exceeds
    truncation_tail_tol.  Returns a dict with values (n_eval, nsites),
    eval times, the tail bound, and the slope scale P.
    """
    grid = traj.grid
    spec = traj.spec
    r = spec.growth_exponent
    P = (1.0 + float(np.linalg.norm(traj.p))) ** (r - 2.0)
    lamm = traj.lam_minus()
    lamp = traj.lam_plus()
    lamp_nbr = _neighbor_lambda_sum(lamp, grid)
    times = traj.times
    total = times[-1] - times[0]
    if horizon is None:
        horizon = 0.75 * total
    if eval_frames is None:
        t_cut = times[-1] - horizon
        eval_frames = np.nonzero(times <= t_cut)[0]
        if len(eval_frames) == 0:
            raise HorizonTooShort("horizon exceeds the recorded trajectory")
    kernels = kernels or ModerationKernels(choose_delta())
    n_eval = len(eval_frames)
    vals = np.empty((n_eval, grid.nsites))
    worst_tail = 0.0
    for idx, j0 in enumerate(eval_frames):
        j_end = np.searchsorted(times, times[j0] + horizon, side="right")
        vals[idx], tail = _moderation_core(
            times, lamm, lamp_nbr, j0, P, P, P, grid.d,
            j_end=max(j_end, j0 + 2), kernels=kernels)
        worst_tail = max(worst_tail, tail)
    if worst_tail > truncation_tail_tol:
        raise HorizonTooShort(
            f"truncation bound {worst_tail:.2e} > {truncation_tail_tol:.0e}; "
            "lengthen the horizon")
    return {
        "values": vals, "times": times[eval_frames],
        "frames": np.asarray(eval_frames), "tail_bound": worst_tail,
        "slope_scale": P, "delta": kernels.delta,
    }


def moderated_env_finite(times, lamm, lamp, grid, rate, cap=1.0,
                         add_const=1.0, kernels=None):
    """Finite-horizon moderated field on the window [times[0], times[-1]]:
    frames in the lower half integrate forward to the window end, frames in
    the upper half integrate backward (time reversal), so only in-window
    values are used.  Returns (n_frames, nsites) values."""
    kernels = kernels or ModerationKernels(choose_delta())
    lamp_nbr = _neighbor_lambda_sum(lamp, grid)
    mid = 0.5 * (times[0] + times[-1])
    F = len(times)
    vals = np.empty((F, grid.nsites))
    times_rev = times[-1] + times[0] - times[::-1]
    lamm_rev = lamm[::-1]
    lamp_nbr_rev = lamp_nbr[::-1]
    for j in range(F):
        if times[j] <= mid:
            vals[j], _ = _moderation_core(times, lamm, lamp_nbr, j, rate,
                                          cap, add_const, grid.d,
                                          kernels=kernels)
        else:
            jr = F - 1 - j
            vals[j], _ = _moderation_core(times_rev, lamm_rev, lamp_nbr_rev,
                                          jr, rate, cap, add_const, grid.d,
                                          kernels=kernels)
    return vals


def moderated_tail_report(m_samples, r, n_levels=8):
    """Empirical tails of m and 1/m with the growth-exponent regressions:
    log P[m > K] against K^(r/(r-2)) and log P[1/m > K] against
    (ln K)^(r/(r-2))."""
    m = np.asarray(m_samples, dtype=np.float64).ravel()
    if m.size < 1000:
        raise ValueError("need >= 1000 samples for the tail report")
    ex = r / (r - 2.0)

    def _one_sided(x, transform):
        ks = np.quantile(x, np.linspace(0.5, 0.998, n_levels))
        ks = np.unique(ks)
        tails = np.array([(x >= K).mean() for K in ks])
        keep = tails > 0
        if keep.sum() < 3:
            raise EmptyTail("tail too short for a regression")
        xs = transform(ks[keep])
        ys = np.log(tails[keep])
        slope, intercept = np.polyfit(xs, ys, 1)
        resid = ys - (slope * xs + intercept)
        ss = ((ys - ys.mean()) ** 2).sum()
        r2 = 1.0 - (resid ** 2).sum() / ss if ss > 0 else 1.0
        return {"K": ks[keep], "tail": tails[keep], "slope": float(slope),
                "r_squared": float(r2)}

    upper = _one_sided(m, lambda K: K ** ex)
    inv = m[m > 0]
    lower = _one_sided(1.0 / inv, lambda K: np.abs(np.log(K)) ** ex)
    return {"m_tail": upper, "m_inverse_tail": lower, "exponent": ex,
            "mean": float(m.mean()), "min": float(m.min()),
            "max": float(m.max())}


def _neighbors_within_2(grid):
    """Site index table of all y with |y - x| <= 2 (Euclidean, periodic)."""
    from itertools import product
    offsets = [o for o in product(range(-2, 3), repeat=grid.d)
               if sum(v * v for v in o) <= 4]
    coords = grid.coordinates()
    cols = [grid.site_index(coords + np.array(o)) for o in offsets]
    return np.stack(cols, axis=1)     # (nsites, n_nbr)


def moderation_ratio(times, frames, env, traj_p, slope_scale, m_field,
                     m_frames, kernels=None, residual_tol=1e-8):
    """Max over space-time of m |grad u|^2 divided by the kernel-weighted
    neighborhood dissipation sum_{y~2x} int K_{P(s-t)} grad u . a grad u ds.

    frames must solve the unforced parabolic equation in env (residual
    checked).  m_field holds m at the frames listed in m_frames.  Returns
    (max_ratio, per-evaluation ratios); zero-over-zero sites are skipped.
    """
    grid = env.grid
    kernels = kernels or ModerationKernels(choose_delta())
    res = residual_norm(times, frames, env)
    scale = max(np.abs(frames).max(), 1.0)
    if res > residual_tol * scale:
        raise ValueError(f"input does not solve the equation: {res:g}")
    # dissipation density per frame
    dens = np.empty((len(times), grid.nsites))
    for k, (t, u) in enumerate(zip(times, frames)):
        a = env.mats[env.frame_at(t)]
        g = gradient(u, grid)
        dens[k] = np.einsum("ix,xij,jx->x", g, a, g)
    nbr2 = _neighbors_within_2(grid)
    ratios = []
    for idx, j0 in enumerate(m_frames):
        ts = times[j0:] - times[j0]
        w = kernels.K(slope_scale * ts)
        weighted = np.trapezoid(w[:, None] * dens[j0:], ts, axis=0)
        rhs = weighted[nbr2].sum(axis=1)
        g0 = gradient(frames[j0], grid)
        lhs = m_field[idx] * (g0 ** 2).sum(axis=0)
        keep = rhs > 0
        if keep.any():
            ratios.append((lhs[keep] / rhs[keep]).max())
        if (~keep).any() and lhs[~keep].max() > 1e-14 * scale:
            raise ZeroDivisionError("zero dissipation under nonzero gradient")
    if not ratios:
        return 0.0, np.zeros(0)
    return float(max(ratios)), np.asarray(ratios)


def wilson_interval(successes, n, z=1.96):
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return center - half, center + half


def exit_time_experiment(spec, grid, p, R1, T_grid, replicas, seed=0,
                         site=0, dt=None, burn_in=None):
    """Empirical confinement probabilities of the local slope.

    For each replica, tracks sup_{t <= T} |p + grad phi(t, site)| along a
    stationary run and records whether it stays below R1 up to every T in
    T_grid.  Returns the probability table with Wilson intervals and the
    regression of log-probability against (ln T)^(r/(r-2)).
    """
    from .dynamics import simulate_stationary

    p = np.asarray(p, dtype=np.float64)
    T_grid = np.asarray(sorted(T_grid), dtype=np.float64)
    T_max = float(T_grid[-1])
    confined = np.zeros((len(T_grid), replicas), dtype=bool)
    for rep in range(replicas):
        traj = simulate_stationary(spec, grid, p, seed=seed + rep,
                                   burn_in=burn_in, horizon=T_max,
                                   record_stride=1, dt=dt)
        slopes = np.linalg.norm(traj.slopes()[:, site, :], axis=-1)
        sup_running = np.maximum.accumulate(slopes)
        idx = np.searchsorted(traj.times, T_grid, side="right") - 1
        idx = np.clip(idx, 0, len(sup_running) - 1)
        confined[:, rep] = sup_running[idx] <= R1
    counts = confined.sum(axis=1)
    probs = counts / replicas
    intervals = np.array([wilson_interval(c, replicas) for c in counts])
    r = spec.growth_exponent
    ex = r / (r - 2.0) if r > 2 else 2.0
    keep = probs > 0
    slope = np.nan
    if keep.sum() >= 2:
        xs = np.log(T_grid[keep]) ** ex
        slope = float(np.polyfit(xs, np.log(probs[keep]), 1)[0])
    return {
        "T": T_grid, "probability": probs, "wilson_low": intervals[:, 0],
        "wilson_high": intervals[:, 1], "slope_vs_logT_pow": slope,
        "exponent": ex, "replicas": replicas, "R1": R1,
    }
