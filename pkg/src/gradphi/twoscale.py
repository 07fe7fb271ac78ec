"""Two-scale expansion: mesoscopic partition of unity, local correctors on
boxes with shared noise, assembly of the corrected profile, and the
measured error terms of the homogenization argument.

Geometry.  kappa = 1/m is the mesoscopic scale (an inverse integer), with
L = kappa/eps an integer >= 4.  Centers live on the lattice
(kappa^2 N*) x (kappa Z)^d inside (0,1] x T; the bump of center z is
supported in the backward cylinder (t_z - 4 kappa^2, t_z] x {|x - y_z|_inf
<= 2 kappa} and the bumps are normalized by their pointwise sum, so the
partition identity is exact by construction.

Correctors.  Each center carries a stationary tilted dynamic at slope
p_z = avg of grad_eps ubar over its cylinder, run on the box of side
min(10 L, N) with periodic boundary conditions, plus the running average
of the raw Brownian motions over the box (so the corrector's time
derivative matches the unprojected noise of the rescaled dynamic).  Noise
is addressed by absolute (step, site), which is what couples overlapping
boxes.

Exactness.  All fields share one dense frame grid with exactly one
integrator step per frame, so the discrete space-time identity

    D_t[w - sqrt(2) B_eps] - div_eps DV(grad_eps w)
        = E1 - E4 - div_eps (E2 + E3)  + (taming deficit)

holds frame-by-frame to taming/roundoff when E4 uses the discrete product
rule (backward-shifted gradient factors) and E1 the matching discrete time
rule.  This residual is the whole-module consistency check.
"""

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import core
from .homogenized import SurfaceTensionTable
from .lattice import TorusGrid, divergence, gradient
from .potential import flux as potential_flux
from .potential import lambda_plus_field
from .rng import philox_normal_block

__all__ = ["MesoDecomposition", "build_partition", "TwoScaleRun",
           "run_two_scale", "BadScale"]


class BadScale(ValueError):
    pass


def _smoothstep(v):
    v = np.clip(v, 0.0, 1.0)
    return 3.0 * v * v - 2.0 * v ** 3


def _smoothstep_prime(v):
    inside = (v > 0.0) & (v < 1.0)
    return np.where(inside, 6.0 * v - 6.0 * v * v, 0.0)


def _time_bump(u):
    """1-d C^1 bump supported on (-4, 0], plateau [-3, -1], unit ramps."""
    u = np.asarray(u, dtype=np.float64)
    up = _smoothstep(u + 4.0)          # rises on [-4, -3]
    down = 1.0 - _smoothstep(u + 1.0)  # falls on [-1, 0]
    val = np.where(u <= -3.0, up, np.where(u <= -1.0, 1.0, down))
    return np.where((u > -4.0) & (u <= 0.0), val, 0.0)


def _time_bump_prime(u):
    u = np.asarray(u, dtype=np.float64)
    dup = _smoothstep_prime(u + 4.0)
    ddown = -_smoothstep_prime(u + 1.0)
    val = np.where(u <= -3.0, dup, np.where(u <= -1.0, 0.0, ddown))
    return np.where((u > -4.0) & (u <= 0.0), val, 0.0)


def _space_bump(v):
    """1-d bump supported on (-2, 2), plateau [-1, 1], unit ramps."""
    v = np.asarray(v, dtype=np.float64)
    up = _smoothstep(v + 2.0)
    down = 1.0 - _smoothstep(v - 1.0)
    val = np.where(v <= -1.0, up, np.where(v <= 1.0, 1.0, down))
    return np.where((v > -2.0) & (v < 2.0), val, 0.0)


@dataclass
class MesoDecomposition:
    """Partition-of-unity bookkeeping for one (eps, kappa) pair."""

    eps: float
    kappa: float
    d: int
    gamma: float = None
    centers: list = field(default_factory=list)   # (t_z, y_z coords array)

    def __post_init__(self):
        n = int(round(1.0 / self.eps))
        m = int(round(1.0 / self.kappa))
        if abs(m * self.kappa - 1.0) > 1e-12:
            raise BadScale("kappa must be the inverse of an integer")
        L = self.kappa / self.eps
        if abs(L - round(L)) > 1e-9 or round(L) < 4:
            raise BadScale("kappa/eps must be an integer >= 4")
        self.L = int(round(L))
        self.n = n
        self.m = m
        if not self.centers:
            # center times extend three slots past 1 so the backward bumps
            # cover the end of the window (the construction is otherwise
            # left open; supports are clipped to (0, 1] by usage)
            times = [self.kappa ** 2 * j
                     for j in range(1, m * m + 4)]
            space = list(product(range(m), repeat=self.d))
            self.centers = [(t, self.kappa * np.array(y, dtype=np.float64))
                            for t in times for y in space]

    @property
    def n_centers(self):
        return len(self.centers)

    def _raw_bumps(self, t, coords_frac):
        """Unnormalized bump values of every center at macro time t and
        fractional site coordinates (nsites, d).  Returns (n_centers,
        nsites)."""
        out = np.empty((self.n_centers, coords_frac.shape[0]))
        for zi, (tz, yz) in enumerate(self.centers):
            u = (t - tz) / self.kappa ** 2
            tb = _time_bump(np.array(u))
            if tb == 0.0:
                out[zi] = 0.0
                continue
            val = np.full(coords_frac.shape[0], float(tb))
            for ax in range(self.d):
                dx = coords_frac[:, ax] - yz[ax]
                dx -= np.round(dx)            # periodic displacement
                val *= _space_bump(dx / self.kappa)
            out[zi] = val
        return out

    def chi(self, t, coords_frac):
        """Normalized partition values (n_centers, nsites)."""
        raw = self._raw_bumps(t, coords_frac)
        total = raw.sum(axis=0)
        if np.any(total <= 0):
            raise BadScale("partition does not cover the requested points")
        return raw / total

    def chi_dt(self, t, coords_frac):
        """Analytic time derivative of the normalized bumps (quotient
        rule); the derivatives sum to zero pointwise."""
        raw = self._raw_bumps(t, coords_frac)
        total = raw.sum(axis=0)
        draw = np.empty_like(raw)
        for zi, (tz, yz) in enumerate(self.centers):
            u = (t - tz) / self.kappa ** 2
            dtb = _time_bump_prime(np.array(u)) / self.kappa ** 2
            tb = _time_bump(np.array(u))
            if tb == 0.0 and dtb == 0.0:
                draw[zi] = 0.0
                continue
            val = np.ones(coords_frac.shape[0])
            for ax in range(self.d):
                dx = coords_frac[:, ax] - yz[ax]
                dx -= np.round(dx)
                val *= _space_bump(dx / self.kappa)
            draw[zi] = val * float(dtb)
        dtotal = draw.sum(axis=0)
        return (draw * total - raw * dtotal) / total ** 2

    def derivative_constants(self, grid, n_times=13):
        """Empirical constants of the scaled derivative bounds
        kappa^(2l+k) |d_t^l grad^k chi| for l in {0,1}, k in {0,1,2}."""
        coords = grid.coordinates() / grid.n
        consts = {}
        ts = np.linspace(1e-3, 1.0, n_times)
        worst = {key: 0.0 for key in
                 ((0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2))}
        plus, _ = grid._tables()
        for t in ts:
            for l, base in ((0, self.chi(t, coords)),
                            (1, self.chi_dt(t, coords))):
                fields = base
                worst[(l, 0)] = max(worst[(l, 0)], np.abs(fields).max())
                g1 = np.stack([(fields[:, plus[i]] - fields) / grid.scale
                               for i in range(grid.d)])
                worst[(l, 1)] = max(worst[(l, 1)], np.abs(g1).max())
                g2 = np.stack([(g1[:, :, plus[i]] - g1) / grid.scale
                               for i in range(grid.d)])
                worst[(l, 2)] = max(worst[(l, 2)], np.abs(g2).max())
        for (l, k), v in worst.items():
            consts[f"l{l}_k{k}"] = self.kappa ** (2 * l + k) * v
        return consts


def build_partition(eps, gamma=None, kappa=None, d=2, r=3.0):
    """Mesoscopic decomposition with kappa snapped to an inverse integer.

    Default gamma = 1/(30 d r); at desk scale the snap picks the largest
    admissible kappa = 1/m with m >= max(2, round(eps^-gamma)) such that
    kappa/eps is an integer >= 4 (BadScale when none exists).
    """
    n = int(round(1.0 / eps))
    if abs(n * eps - 1.0) > 1e-12:
        raise BadScale("1/eps must be an integer")
    if kappa is None:
        if gamma is None:
            gamma = 1.0 / (30.0 * d * r)
        m_target = max(2, int(round(eps ** -gamma)))
        choices = [m for m in range(m_target, n // 4 + 1)
                   if n % m == 0 and n // m >= 4]
        if not choices:
            raise BadScale(
                f"no admissible kappa for eps=1/{n} (need m | {n}, n/m >= 4)")
        m = choices[0]
        kappa = 1.0 / m
    return MesoDecomposition(eps, kappa, d, gamma=gamma)


def _tamed_noise_args(spec, dt, grid, project):
    plus, minus = grid._tables()
    return (1.0 / grid.scale, 10.0 / dt, core.pot_code(spec),
            spec.c, spec.r, spec.R0, project, plus, minus)


@dataclass
class _Corrector:
    index: int
    t_z: float
    y_z: np.ndarray
    p_z: np.ndarray
    box_grid: TorusGrid
    global_sites: np.ndarray         # global linear indices of box sites
    psi: np.ndarray = None           # (n_frames+1, box_sites)
    drift_tamed: np.ndarray = None   # (n_frames, box_sites), macro units
    drift_untamed: np.ndarray = None


class TwoScaleRun:
    """Shared-frame two-scale computation on a window of macro times.

    All consistency-critical fields (homogenized solution, correctors,
    Brownian paths) advance one integrator step per dense frame, which
    makes the error-term identity exact up to the taming deficit.
    """

    def __init__(self, spec, table, f_values, eps, kappa=None, seed=0,
                 window=(0.0, None), n_frames=48, burn_in_micro=None,
                 max_centers=None, cfl_margin=0.4):
        f_values = np.asarray(f_values, dtype=np.float64)
        self.spec = spec
        self.table = table
        self.eps = eps
        self.d = f_values.ndim
        self.seed = seed
        self.decomp = build_partition(eps, kappa=kappa, d=self.d,
                                      r=spec.growth_exponent)
        n = self.decomp.n
        self.grid = TorusGrid(self.d, n, scale=eps)
        self.micro_grid = TorusGrid(self.d, n, scale=1.0)
        self.f = f_values

        # dense frame step: one micro step per frame, CFL on both sides
        g0 = gradient(f_values.ravel(), self.grid)
        gmax = float(np.linalg.norm(g0, axis=0).max())
        probe = np.zeros((1, self.d))
        probe[0, 0] = gmax + 4.0
        lam_micro = float(lambda_plus_field(spec, probe)[0])
        lam_hom = (table.max_jacobian()
                   if isinstance(table, SurfaceTensionTable) else lam_micro)
        lam = max(lam_micro, lam_hom)
        self.dt_micro = cfl_margin / (2.0 * self.d * lam)
        self.frame_dt = eps ** 2 * self.dt_micro

        t_a, t_b = window
        if t_b is None:
            t_b = t_a + n_frames * self.frame_dt
        self.j_lo = int(np.floor(t_a / self.frame_dt + 1e-9))
        self.j_hi = self.j_lo + n_frames
        self.times = (self.j_lo + np.arange(n_frames + 1)) * self.frame_dt
        if burn_in_micro is None:
            burn_in_micro = 20.0 * min(10 * self.decomp.L, n) ** 2
        self.burn_in_micro = burn_in_micro
        self.max_centers = max_centers

        self._solve_homogenized_window()
        self._build_correctors()
        self._accumulate_brownian()

    # -- homogenized solution, one explicit step per dense frame ----------

    def _solve_homogenized_window(self):
        from .homogenized import solve_homogenized
        grid = self.grid
        t_start = self.j_lo * self.frame_dt
        if t_start > 0:
            # coarse adaptive pre-solve; also records history frames for
            # the cylinder averages that define the center slopes
            hist_times = np.linspace(0.0, t_start, 65)
            ht, hf, _ = solve_homogenized(self.table, self.f, self.eps,
                                          T=t_start, record_times=hist_times)
            u = hf[-1].copy()
            self.ubar_pre = (ht, hf)
        else:
            u = self.f.ravel().copy()
            self.ubar_pre = (np.zeros(1), u[None, :].copy())
        frames = [u.copy()]
        for _ in range(len(self.times) - 1):
            g = gradient(u, grid)
            q = np.asarray(self.table(g.T))
            u = u + self.frame_dt * divergence(q.T, grid)
            frames.append(u.copy())
        self.ubar = np.stack(frames)

    # -- centers and their slopes -----------------------------------------

    def _slope_of_center(self, t_z, y_z):
        """Average of grad_eps ubar over the backward cylinder of the
        center, evaluated on the recorded frames inside it (pre-window
        history plus window frames; the homogenized field is smooth, so
        the frame subsample is adequate)."""
        grid = self.grid
        kap = self.decomp.kappa
        t_lo, t_hi = t_z - 4 * kap * kap, t_z
        cand_t = np.concatenate([self.ubar_pre[0], self.times])
        cand_f = np.concatenate([self.ubar_pre[1], self.ubar])
        sel = (cand_t > t_lo - 1e-12) & (cand_t <= t_hi + 1e-12)
        if not sel.any():
            sel = np.zeros(len(cand_t), dtype=bool)
            sel[np.argmin(np.abs(cand_t - t_z))] = True
        coords = grid.coordinates() / grid.n
        mask = np.ones(grid.nsites, dtype=bool)
        for ax in range(self.d):
            dx = coords[:, ax] - y_z[ax]
            dx -= np.round(dx)
            mask &= np.abs(dx) <= 2 * kap + 1e-12
        acc = np.zeros(self.d)
        picked = np.nonzero(sel)[0]
        for j in picked:
            g = gradient(cand_f[j], grid)
            acc += g[:, mask].mean(axis=1)
        return acc / len(picked)

    # -- correctors --------------------------------------------------------

    def _build_correctors(self):
        decomp = self.decomp
        n = decomp.n
        B = min(10 * decomp.L, n)
        box_grid = TorusGrid(self.d, B, scale=1.0)
        spec = self.spec
        dt = self.dt_micro
        n_frames = len(self.times) - 1
        centers = list(enumerate(decomp.centers))
        if self.max_centers is not None and len(centers) > self.max_centers:
            rng = np.random.default_rng(self.seed + 999)
            keep = sorted(rng.choice(len(centers), self.max_centers,
                                     replace=False))
            centers = [centers[i] for i in keep]
            self.subsampled_centers = [c[0] for c in centers]
        else:
            self.subsampled_centers = None

        self.correctors = []
        args = _tamed_noise_args(spec, dt, box_grid, True)
        n_burn = int(np.ceil(self.burn_in_micro / dt))
        for zi, (t_z, y_z) in centers:
            p_z = self._slope_of_center(t_z, y_z)
            origin = np.round(y_z * n).astype(int) - B // 2
            local_coords = box_grid.coordinates()
            global_sites = self.micro_grid.site_index(local_coords + origin)
            corr = _Corrector(zi, t_z, y_z, p_z, box_grid,
                              np.asarray(global_sites))
            # stationary burn-in ending at the window start frame
            phi = np.zeros(box_grid.nsites)
            sqrt_dt = np.sqrt(dt)
            S = 0.0                     # sqrt(2) * average Brownian path
            k0 = self.j_lo - n_burn
            k = k0
            while k < self.j_lo:
                blk = min(1024, self.j_lo - k)
                xi = sqrt_dt * philox_normal_block(self.seed, k, blk,
                                                   corr.global_sites)
                core.langevin_block(phi, p_z, xi, dt, *args)
                S += np.sqrt(2.0) * xi.mean(axis=1).sum()
                k += blk
            psi = np.empty((n_frames + 1, box_grid.nsites))
            drift_t = np.empty((n_frames, box_grid.nsites))
            drift_u = np.empty((n_frames, box_grid.nsites))
            psi[0] = phi + S
            for j in range(n_frames):
                xi = sqrt_dt * philox_normal_block(
                    self.seed, self.j_lo + j, 1, corr.global_sites)
                drift_u[j] = self._untamed_drift(phi, p_z, box_grid)
                prev = phi.copy()
                core.langevin_block(phi, p_z, xi, dt, *args)
                S += np.sqrt(2.0) * xi.mean(axis=1).sum()
                psi[j + 1] = phi + S
                # tamed drift reconstructed exactly from the update
                drift_t[j] = (psi[j + 1] - psi[j]
                              - np.sqrt(2.0) * xi[0]) / dt
            corr.psi = psi
            # macro-units drift: div_eps DV(grad_eps v_z) = micro/eps
            corr.drift_tamed = drift_t / self.eps
            corr.drift_untamed = drift_u / self.eps
            self.correctors.append(corr)

    def _untamed_drift(self, phi, p_z, box_grid):
        g = gradient(phi, box_grid) + p_z[:, None]
        fl = potential_flux(self.spec, g.T)
        return divergence(fl.T, box_grid)

    # -- Brownian paths -----------------------------------------------------

    def _accumulate_brownian(self):
        """sqrt(2) B_eps at every dense frame on the global torus, anchored
        at zero on the first frame."""
        n_frames = len(self.times) - 1
        sites = np.arange(self.grid.nsites, dtype=np.uint64)
        sqrt_dt = np.sqrt(self.dt_micro)
        B = np.zeros((n_frames + 1, self.grid.nsites))
        for j in range(n_frames):
            xi = sqrt_dt * philox_normal_block(self.seed, self.j_lo + j, 1,
                                               sites)[0]
            B[j + 1] = B[j] + self.eps * xi
        self.B_eps = np.sqrt(2.0) * B

    # -- assembly and error terms -------------------------------------------

    def _coords_frac(self):
        return self.grid.coordinates() / self.grid.n

    def _center_field(self, corr, values_on_box):
        """Scatter a box field into a global-size array (zeros outside)."""
        out = np.zeros(self.grid.nsites)
        out[corr.global_sites] = values_on_box
        return out

    def chi_matrix(self, t):
        return self.decomp.chi(t, self._coords_frac())

    def assemble_w(self, j):
        """w at dense frame j (0-based within the window)."""
        t = self.times[j]
        chi = self.chi_matrix(t)
        w = self.ubar[j].copy()
        for ci, corr in enumerate(self.correctors):
            row = chi[corr.index]
            if np.any(row):
                w += self.eps * row * self._center_field(corr, corr.psi[j])
        return w

    def error_terms(self, j):
        """E1, E2 (vector), E3 (vector), E4 at frame j, plus the exact
        discrete residual ingredients.  Returns a dict of fields."""
        grid = self.grid
        t0, t1 = self.times[j], self.times[j + 1]
        coords = self._coords_frac()
        chi0 = self.decomp.chi(t0, coords)
        chi1 = self.decomp.chi(t1, coords)
        dchi = (chi1 - chi0) / self.frame_dt

        w0 = self.assemble_w(j)
        gw = gradient(w0, grid)
        flux_w = potential_flux(self.spec, gw.T)      # (nsites, d)

        gu = gradient(self.ubar[j], grid)
        sigma_flux_u = np.asarray(self.table(gu.T))   # (nsites, d)

        E2 = flux_w.copy()
        E3 = np.zeros_like(E2)
        E4 = np.zeros(grid.nsites)
        sum_chi_drift_t = np.zeros(grid.nsites)
        sum_chi_drift_u = np.zeros(grid.nsites)
        E1 = np.zeros(grid.nsites)
        _, minus = grid._tables()

        for corr in self.correctors:
            zi = corr.index
            row0 = chi0[zi]
            row1 = chi1[zi]
            drow = dchi[zi]
            active = (row0 != 0) | (row1 != 0)
            if not np.any(active):
                continue
            # flux of the corrected plane on the box, scattered globally
            g_box = gradient(corr.psi[j], corr.box_grid) + corr.p_z[:, None]
            flux_z_box = potential_flux(self.spec, g_box.T)   # (box, d)
            flux_z = np.zeros((grid.nsites, self.d))
            flux_z[corr.global_sites] = flux_z_box
            sigma_pz = np.asarray(self.table(corr.p_z[None, :]))[0]

            E2 -= row0[:, None] * flux_z
            E3 += row0[:, None] * (sigma_pz[None, :] - sigma_flux_u)
            # discrete product rule: sum_i (grad_i chi)(x - e_i) G_i(x - e_i)
            G = flux_z - sigma_pz[None, :]
            gchi = (row0[grid.neighbors_plus] - row0[None, :]) / grid.scale
            for i in range(self.d):
                E4 += gchi[i][minus[i]] * G[minus[i], i]
            sum_chi_drift_t += row0 * self._center_field(corr,
                                                         corr.drift_tamed[j])
            sum_chi_drift_u += row0 * self._center_field(corr,
                                                         corr.drift_untamed[j])
            E1 += drow * (self.eps * self._center_field(corr, corr.psi[j + 1])
                          - self.B_eps[j + 1])
        return {
            "E1": E1, "E2": E2, "E3": E3, "E4": E4,
            "flux_w": flux_w, "chi0": chi0,
            "sum_chi_drift_tamed": sum_chi_drift_t,
            "sum_chi_drift_untamed": sum_chi_drift_u,
        }

    def residual(self, j):
        """Pointwise residual of the discrete two-scale identity at frame j,

            D_t[w - sqrt(2) B_eps] - div DV(grad w) - (E1 - E4 - div(E2+E3)),

        which must vanish to integrator tolerance; subtracting the
        chi-weighted taming deficit (tamed minus analytic corrector drift)
        leaves pure roundoff.  Returns a dict with both fields and the
        scale of the balanced terms."""
        grid = self.grid
        terms = self.error_terms(j)
        w0 = self.assemble_w(j)
        w1 = self.assemble_w(j + 1)
        lhs = (w1 - w0 - (self.B_eps[j + 1] - self.B_eps[j])) / self.frame_dt
        div_flux_w = divergence(terms["flux_w"].T, grid)
        rhs_err = (terms["E1"] - terms["E4"]
                   - divergence((terms["E2"] + terms["E3"]).T, grid))
        raw = lhs - div_flux_w - rhs_err
        corrected = raw - (terms["sum_chi_drift_tamed"]
                           - terms["sum_chi_drift_untamed"])
        scale = max(np.abs(lhs).max(), np.abs(div_flux_w).max(), 1.0)
        return {"raw": raw, "corrected": corrected, "scale": scale}

    def error_norm_report(self, frames=None, q=None):
        """Norms of the four error terms over the window (volume-normalized
        in space, averaged over the reported frames) plus the running
        time-integral of the spatial average of E1 - E4."""
        from .norms import lq_norm
        q = self.spec.growth_exponent if q is None else q
        frames = range(len(self.times) - 1) if frames is None else frames
        acc = {"E2_Lr": [], "E3_Lr": [], "E1_L2": [], "E4_L2": []}
        avg_series = []
        for j in frames:
            terms = self.error_terms(j)
            acc["E2_Lr"].append(lq_norm(np.linalg.norm(terms["E2"], axis=1), q))
            acc["E3_Lr"].append(lq_norm(np.linalg.norm(terms["E3"], axis=1), q))
            acc["E1_L2"].append(lq_norm(terms["E1"], 2))
            acc["E4_L2"].append(lq_norm(terms["E4"], 2))
            avg_series.append((terms["E1"] - terms["E4"]).mean())
        out = {k: float(np.mean(v)) for k, v in acc.items()}
        out["eps_E1_L2"] = self.eps * out["E1_L2"]
        out["eps_E4_L2"] = self.eps * out["E4_L2"]
        out["avg_E_time_integral"] = float(
            np.abs(np.cumsum(np.asarray(avg_series) * self.frame_dt)).max())
        out["n_frames"] = len(list(frames)) if not isinstance(frames, range) \
            else len(self.times) - 1
        out["u_minus_w_L2"] = float(np.sqrt(np.mean(
            (self.ubar[0] - self.assemble_w(0)) ** 2)))
        return out


def run_two_scale(spec, table, f_values, eps, **kwargs):
    """Convenience constructor; see TwoScaleRun."""
    return TwoScaleRun(spec, table, f_values, eps, **kwargs)


def corrector_coupling_ratio(spec, p, box_side, offset, micro_side,
                             seed=0, probe_width=4, horizon=None,
                             burn_in=None, dt=None):
    """Measure how strongly two overlapping-box dynamics are coupled by
    their shared noise.

    Two stationary dynamics at the same slope run on boxes of side
    ``box_side`` whose origins differ by ``offset`` sites inside a
    micro lattice of side ``micro_side``; their noise is addressed by
    absolute site, so it agrees on the overlap.  Returns the ratio of the
    coupled flux-average difference over a probe sub-box centered in the
    overlap to the same difference for an independently seeded pair
    (ratio < 1 means the coupling binds; the paper's localization lemma
    predicts it shrinks as the probe sits deeper inside the overlap).
    """
    from .dynamics import simulate_stationary

    d = np.asarray(p).size
    gbl = TorusGrid(d, micro_side)
    box = TorusGrid(d, box_side)
    if burn_in is None:
        burn_in = 4.0 * box_side ** 2
    if horizon is None:
        horizon = probe_width ** 2 * 8.0

    def run_box(origin_scalar, seed_):
        origin = np.full(d, origin_scalar)
        sites = gbl.site_index(box.coordinates() + origin)
        return simulate_stationary(spec, box, p, seed=seed_,
                                   burn_in=burn_in, horizon=horizon,
                                   record_stride=4, dt=dt,
                                   sites=np.asarray(sites, dtype=np.uint64))

    def probe_mean_flux(traj, origin_scalar):
        # probe box centered in the overlap, in each box's local coords
        center = offset // 2 + (box_side - offset) // 2
        lo = center - probe_width // 2 - origin_scalar
        coords = box.coordinates()
        mask = np.ones(box.nsites, dtype=bool)
        for ax in range(d):
            rel = np.mod(coords[:, ax] - lo, micro_side)
            mask &= rel < probe_width
        return traj.flux()[:, mask, :].mean(axis=(0, 1))

    a = run_box(0, seed)
    b = run_box(offset, seed)
    coupled = np.linalg.norm(probe_mean_flux(a, 0) - probe_mean_flux(b, offset))
    c = run_box(offset, seed + 7919)
    independent = np.linalg.norm(probe_mean_flux(a, 0)
                                 - probe_mean_flux(c, offset))
    return {"coupled": float(coupled), "independent": float(independent),
            "ratio": float(coupled / max(independent, 1e-300))}
