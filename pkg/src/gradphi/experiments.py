"""Config-driven experiment runner.

Configs are flat INI files with sections; every default is materialized
into the manifest so runs are self-describing.  Independent (eps, replica)
jobs can run on a process pool; results merge in sorted job order, so the
worker count never changes an emitted number.
"""

import configparser
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import __version__
from .dynamics import simulate_rescaled, simulate_stationary
from .gibbs import (MCParams, gradient_tail_report,
                    surface_tension_gradient, surface_tension_hessian,
                    surface_tension_value)
from .homogenized import (SurfaceTensionTable, build_sigma_table,
                          identity_table, sample_on_torus, solve_homogenized)
from .io import Manifest, write_csv, write_frames
from .lattice import TorusGrid, gradient
from .moderated import (exit_time_experiment, moderated_env,
                        moderated_tail_report)
from .norms import flux_weak_norm_experiment
from .potential import PotentialSpec
from .twoscale import run_two_scale

__all__ = ["ExperimentConfig", "ConfigError", "UnknownExperiment",
           "run_named_experiment", "run_hydro_limit", "INITIAL_CONDITIONS"]


class ConfigError(ValueError):
    pass


class UnknownExperiment(ConfigError):
    pass


def _f_sincos2d(x):
    return np.sin(2 * np.pi * x[..., 0]) + 0.5 * np.cos(2 * np.pi * x[..., 1])


def _f_sin1d(x):
    return np.sin(2 * np.pi * x[..., 0])


def _f_coscos2d(x):
    return np.cos(2 * np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1])


INITIAL_CONDITIONS = {
    "sincos2d": (_f_sincos2d, 2),
    "sin1d": (_f_sin1d, 1),
    "coscos2d": (_f_coscos2d, 2),
}


@dataclass
class ExperimentConfig:
    experiment: str
    potential: PotentialSpec
    d: int = 2
    initial_condition: str = "sincos2d"
    epsilons: list = field(default_factory=lambda: [Fraction(1, 8)])
    dt: float = None
    burn_in: float = None
    horizon: float = None
    seeds: list = field(default_factory=lambda: [1])
    out_dir: str = "out"
    sigma_table: str = None
    threads: int = 1
    extra: dict = field(default_factory=dict)

    def validate(self):
        if self.experiment not in _DISPATCH:
            raise UnknownExperiment(
                f"experiment.name: unknown experiment {self.experiment!r}; "
                f"choose from {sorted(_DISPATCH)}")
        for e in self.epsilons:
            frac = Fraction(e).limit_denominator(10 ** 6)
            if frac.numerator != 1:
                raise ConfigError(
                    f"dynamics.epsilons: 1/eps must be an integer, got {e}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("experiment.seeds: seeds must be distinct")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("dynamics.dt: must be > 0")
        if self.initial_condition not in INITIAL_CONDITIONS:
            raise ConfigError(
                f"initial.id: unknown initial condition "
                f"{self.initial_condition!r}")
        fid, fdim = INITIAL_CONDITIONS[self.initial_condition]
        if fdim != self.d:
            raise ConfigError(
                f"initial.id: {self.initial_condition} is {fdim}-dimensional "
                f"but grid.d = {self.d}")
        return self

    def to_dict(self):
        return {
            "experiment": self.experiment,
            "potential": self.potential.to_dict(),
            "d": self.d,
            "initial_condition": self.initial_condition,
            "epsilons": [str(Fraction(e).limit_denominator(10 ** 6))
                         for e in self.epsilons],
            "dt": self.dt, "burn_in": self.burn_in, "horizon": self.horizon,
            "seeds": list(self.seeds), "out_dir": self.out_dir,
            "sigma_table": self.sigma_table, "threads": self.threads,
            "extra": dict(self.extra),
        }

    @classmethod
    def from_ini(cls, path, overrides=None):
        cp = configparser.ConfigParser()
        read = cp.read(path)
        if not read:
            raise ConfigError(f"config file {path!r} not found")

        def get(section, key, default=None):
            if cp.has_option(section, key):
                return cp.get(section, key)
            return default

        def get_float(section, key, default=None):
            raw = get(section, key)
            if raw in (None, "auto", ""):
                return default
            try:
                return float(raw)
            except ValueError:
                raise ConfigError(f"{section}.{key}: not a number: {raw!r}")

        pot_kwargs = {}
        if cp.has_section("potential"):
            pot_kwargs = {
                "variant": get("potential", "variant", "degenerate_radial"),
                "r": float(get("potential", "r", 3.0)),
                "R0": float(get("potential", "R0", 1.0)),
                "c": float(get("potential", "c", 1.0)),
            }
        try:
            spec = PotentialSpec(**pot_kwargs) if pot_kwargs else PotentialSpec()
        except ValueError as exc:
            raise ConfigError(f"potential: {exc}")

        eps_raw = get("dynamics", "epsilons", "1/8")
        epsilons = []
        for tok in eps_raw.split(","):
            tok = tok.strip()
            try:
                epsilons.append(Fraction(tok))
            except (ValueError, ZeroDivisionError):
                raise ConfigError(f"dynamics.epsilons: bad value {tok!r}")

        seeds_raw = get("experiment", "seeds", "1")
        seeds = [int(s) for s in seeds_raw.split(",") if s.strip()]

        extra = {}
        for section in cp.sections():
            if section in ("experiment", "potential", "grid", "initial",
                           "dynamics", "output"):
                continue
            for key, val in cp.items(section):
                extra[f"{section}.{key}"] = val

        cfg = cls(
            experiment=get("experiment", "name", "simulate"),
            potential=spec,
            d=int(get("grid", "d", 2)),
            initial_condition=get("initial", "id", "sincos2d"),
            epsilons=epsilons,
            dt=get_float("dynamics", "dt"),
            burn_in=get_float("dynamics", "burn_in"),
            horizon=get_float("dynamics", "horizon"),
            seeds=seeds,
            out_dir=get("output", "dir", "out"),
            sigma_table=get("output", "sigma_table", None),
            extra=extra,
        )
        for k, v in (overrides or {}).items():
            setattr(cfg, k, v)
        return cfg.validate()


def _mc_from_config(cfg, seed, stream=0):
    return MCParams(seed=seed, burn_in=cfg.burn_in, horizon=cfg.horizon,
                    dt=cfg.dt, stream=stream,
                    record_stride=int(cfg.extra.get("mc.record_stride", 0))
                    or None)


def _extra_float(cfg, key, default):
    return float(cfg.extra.get(key, default))


def _extra_int(cfg, key, default):
    return int(cfg.extra.get(key, default))


def _slopes_from_config(cfg, default="1,0;2,0"):
    raw = cfg.extra.get("slopes.list", default)
    out = []
    for tok in raw.split(";"):
        vals = [float(v) for v in tok.split(",")]
        if len(vals) != cfg.d:
            raise ConfigError(f"slopes.list: slope {tok!r} is not "
                              f"{cfg.d}-dimensional")
        out.append(np.array(vals))
    return out


def _ensure_outdir(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


# ---------------------------------------------------------------------------
# experiment bodies

def _exp_simulate(cfg, manifest):
    out = _ensure_outdir(cfg)
    L = _extra_int(cfg, "simulate.l", 8)
    grid = TorusGrid(cfg.d, L)
    rows = []
    for seed in cfg.seeds:
        for p in _slopes_from_config(cfg):
            traj = simulate_stationary(cfg.potential, grid, p, seed=seed,
                                       burn_in=cfg.burn_in,
                                       horizon=cfg.horizon, dt=cfg.dt)
            tag = f"seed{seed}_p" + "_".join(f"{v:g}" for v in p)
            fpath = os.path.join(out, f"frames_{tag}.gphi")
            write_frames(fpath, cfg.d, L, traj.times, traj.phi)
            manifest.add_output(fpath)
            grads = traj.grad()
            flux = traj.flux()
            cpath = os.path.join(out, f"trajectory_{tag}.csv")
            csv_rows = []
            for k, t in enumerate(traj.times[:64]):
                for x in range(grid.nsites):
                    csv_rows.append([t, x, traj.phi[k, x],
                                     *grads[k, :, x], *flux[k, x]])
            cols = (["t", "site", "phi"]
                    + [f"grad{i}" for i in range(cfg.d)]
                    + [f"flux{i}" for i in range(cfg.d)])
            write_csv(cpath, cols, csv_rows, manifest.config_hash)
            manifest.add_output(cpath)
            rows.append(tag)
    manifest.results["trajectories"] = rows


def _exp_surface_tension(cfg, manifest):
    out = _ensure_outdir(cfg)
    L = _extra_int(cfg, "surface.l", 8)
    grid = TorusGrid(cfg.d, L)
    spec = cfg.potential
    rows = []
    for p in _slopes_from_config(cfg):
        mc = _mc_from_config(cfg, cfg.seeds[0])
        grad, gerr = surface_tension_gradient(spec, grid, p, mc)
        val, verr = surface_tension_value(
            spec, grid, p, n_integration_nodes=_extra_int(cfg, "surface.nodes", 6),
            mc=mc)
        lam = np.zeros(cfg.d)
        lam[0] = 1.0
        hess = surface_tension_hessian(spec, grid, p, lam, mc)
        rows.append([*p, val, verr, *grad, *gerr, hess["value"],
                     hess["stderr"], L, spec.growth_exponent, spec.R0,
                     cfg.seeds[0]])
    cols = ([f"p{i}" for i in range(cfg.d)] + ["sigma", "sigma_err"]
            + [f"grad{i}" for i in range(cfg.d)]
            + [f"grad{i}_err" for i in range(cfg.d)]
            + ["hess_ll", "hess_err", "L", "r", "R0", "seed"])
    path = os.path.join(out, "surface_tension.csv")
    write_csv(path, cols, rows, manifest.config_hash)
    manifest.add_output(path)
    if cfg.sigma_table and cfg.sigma_table != "identity":
        # also build and persist the full symmetric flux table
        table = build_sigma_table(
            spec, grid, p_max=_extra_float(cfg, "table.p_max", 4.0),
            npts=_extra_int(cfg, "table.npts", 5),
            mc=_mc_from_config(cfg, cfg.seeds[0] + 5000))
        table.save(cfg.sigma_table)
        manifest.add_output(cfg.sigma_table)


def _exp_tails(cfg, manifest):
    out = _ensure_outdir(cfg)
    L = _extra_int(cfg, "tails.l", 16)
    grid = TorusGrid(cfg.d, L)
    p = _slopes_from_config(cfg, default="2,0")[0]
    mc = _mc_from_config(cfg, cfg.seeds[0])
    traj = mc.run(cfg.potential, grid, p)
    gn = np.linalg.norm(traj.grad(), axis=1).ravel()
    qs = np.linspace(0.9, 0.9995, _extra_int(cfg, "tails.levels", 12))
    rep = gradient_tail_report(traj, np.quantile(gn, qs))
    path = os.path.join(out, "tails.csv")
    write_csv(path, ["K", "tail"], list(zip(rep["K"], rep["tail"])),
              manifest.config_hash)
    manifest.add_output(path)
    manifest.results["tails"] = {
        "slope": rep["slope"], "r_squared": rep["r_squared"],
        "exponent": rep["exponent"],
    }


def _exp_exit_times(cfg, manifest):
    out = _ensure_outdir(cfg)
    L = _extra_int(cfg, "exit.l", 8)
    grid = TorusGrid(cfg.d, L)
    p = _slopes_from_config(cfg, default="0,0" if cfg.d == 2 else "0")[0]
    T_grid = [float(v) for v in
              cfg.extra.get("exit.t_grid", "1,4,16,64").split(",")]
    rep = exit_time_experiment(
        cfg.potential, grid, p, R1=_extra_float(cfg, "exit.r1", 2.0),
        T_grid=T_grid, replicas=_extra_int(cfg, "exit.replicas", 64),
        seed=cfg.seeds[0], dt=cfg.dt, burn_in=cfg.burn_in)
    path = os.path.join(out, "exit_times.csv")
    write_csv(path, ["T", "probability", "wilson_low", "wilson_high"],
              list(zip(rep["T"], rep["probability"], rep["wilson_low"],
                       rep["wilson_high"])), manifest.config_hash)
    manifest.add_output(path)
    manifest.results["exit_times"] = {
        "slope_vs_logT_pow": rep["slope_vs_logT_pow"],
        "exponent": rep["exponent"],
    }


def _exp_moderated(cfg, manifest):
    out = _ensure_outdir(cfg)
    L = _extra_int(cfg, "moderated.l", 8)
    grid = TorusGrid(cfg.d, L)
    p = _slopes_from_config(cfg, default="2,0" if cfg.d == 2 else "2")[0]
    mc = _mc_from_config(cfg, cfg.seeds[0])
    traj = mc.run(cfg.potential, grid, p)
    env = moderated_env(traj)
    rep = moderated_tail_report(env["values"],
                                cfg.potential.growth_exponent)
    path = os.path.join(out, "moderated.csv")
    write_csv(path, ["K", "tail"],
              list(zip(rep["m_tail"]["K"], rep["m_tail"]["tail"])),
              manifest.config_hash)
    manifest.add_output(path)
    manifest.results["moderated"] = {
        "mean": rep["mean"], "min": rep["min"], "max": rep["max"],
        "m_tail_slope": rep["m_tail"]["slope"],
        "m_inverse_tail_slope": rep["m_inverse_tail"]["slope"],
        "tail_bound": env["tail_bound"], "delta": env["delta"],
    }


def _exp_flux_weak_norm(cfg, manifest):
    out = _ensure_outdir(cfg)
    p = _slopes_from_config(cfg, default="4,0" if cfg.d == 2 else "4")[0]
    n_scales = [int(v) for v in cfg.extra.get("flux.scales", "1,2").split(",")]

    def builder(n_scale, horizon):
        return MCParams(seed=cfg.seeds[0] + n_scale, burn_in=cfg.burn_in,
                        horizon=horizon, dt=cfg.dt)

    rows = flux_weak_norm_experiment(cfg.potential, p, n_scales,
                                     seed=cfg.seeds[0], mc_builder=builder)
    path = os.path.join(out, "flux_weak_norm.csv")
    write_csv(path, ["n_scale", "side", "functional", "ratio"],
              [[r["n_scale"], r["side"], r["functional"], r["ratio"]]
               for r in rows], manifest.config_hash)
    manifest.add_output(path)
    manifest.results["flux_weak_norm"] = [
        {k: v for k, v in r.items()
         if k in ("n_scale", "side", "functional", "ratio")} for r in rows]


def _exp_heat_kernel(cfg, manifest):
    from .parabolic import Environment, energy_series, heat_kernel
    from .potential import potential_eval
    out = _ensure_outdir(cfg)
    env_kind = cfg.extra.get("heat.env", "identity")
    if env_kind == "identity":
        n = _extra_int(cfg, "heat.n", 9)
        grid = TorusGrid(cfg.d, n)
        env = Environment.identity(grid)
    elif env_kind.startswith("from-trajectory:"):
        from .io import read_frames
        fpath = env_kind.split(":", 1)[1]
        if not os.path.exists(fpath):
            raise ConfigError(f"heat.env: trajectory file {fpath!r} missing")
        d, n, times, frames = read_frames(fpath)
        grid = TorusGrid(d, n)
        try:
            p = _slopes_from_config(cfg, default=",".join(["0"] * d))[0]
        except ConfigError:
            p = np.zeros(d)
        plus, _ = grid._tables()
        slopes = np.moveaxis((frames[:, plus] - frames[:, None, :])
                             / grid.scale, 1, 2) + p
        _, _, H = potential_eval(cfg.potential, slopes)
        env = Environment(grid, times, H)
    else:
        raise ConfigError(f"heat.env: unsupported environment {env_kind!r}")
    site = _extra_int(cfg, "heat.start_site", 0)
    t_max = _extra_float(cfg, "heat.t_max", 1.0)
    dt = cfg.dt or 1e-3
    times, frames = heat_kernel(env, 0.0, site, T=t_max, dt=dt,
                                record_every=max(1, int(0.01 / dt)))
    rows = []
    for k, t in enumerate(times):
        for x in range(grid.nsites):
            rows.append([t, x, frames[k, x]])
    path = os.path.join(out, "heat_kernel.csv")
    write_csv(path, ["t", "site", "value"], rows, manifest.config_hash)
    manifest.add_output(path)
    E, D, viol = energy_series(times, frames, env)
    epath = os.path.join(out, "heat_kernel_energy.csv")
    write_csv(epath, ["t", "energy", "dissipation"],
              list(zip(times, E, D)), manifest.config_hash)
    manifest.add_output(epath)
    manifest.results["heat_kernel"] = {"energy_identity_violation": viol}


def _exp_two_scale(cfg, manifest):
    import json
    out = _ensure_outdir(cfg)
    eps = float(min(cfg.epsilons))
    f_fn, _ = INITIAL_CONDITIONS[cfg.initial_condition]
    f = sample_on_torus(f_fn, cfg.d, eps)
    table = _load_or_build_table(cfg, manifest, f)
    kappa_raw = cfg.extra.get("twoscale.kappa")
    run = run_two_scale(
        cfg.potential, table, f, eps,
        kappa=float(Fraction(kappa_raw)) if kappa_raw else None,
        seed=cfg.seeds[0],
        window=(_extra_float(cfg, "twoscale.window_start", 0.4), None),
        n_frames=_extra_int(cfg, "twoscale.frames", 16),
        burn_in_micro=_extra_float(cfg, "twoscale.burn_in_micro", 50.0),
        max_centers=_extra_int(cfg, "twoscale.max_centers", 0) or None)
    rep = run.error_norm_report()
    res = run.residual(0)
    rep["residual_max_rel"] = float(np.abs(res["raw"]).max() / res["scale"])
    rep["residual_corrected_max_rel"] = float(
        np.abs(res["corrected"]).max() / res["scale"])
    rep["eps"] = eps
    rep["kappa"] = run.decomp.kappa
    rep["n_centers"] = run.decomp.n_centers
    rep["subsampled_centers"] = run.subsampled_centers
    path = os.path.join(out, "two_scale.json")
    with open(path, "w") as fh:
        json.dump(rep, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    manifest.add_output(path)
    manifest.results["two_scale"] = rep


def _load_or_build_table(cfg, manifest, f_sample):
    if cfg.sigma_table == "identity" or (cfg.sigma_table is None
                                         and cfg.potential.variant == "quadratic"):
        eps_fine = float(min(cfg.epsilons))
        grid = TorusGrid(cfg.d, int(round(1 / eps_fine)), scale=eps_fine)
        gmax = np.abs(gradient(np.asarray(f_sample).ravel(), grid)).max()
        return identity_table(cfg.d, 3.0 * max(gmax, 1.0),
                              npts=_extra_int(cfg, "table.npts", 9))
    if cfg.sigma_table and os.path.exists(cfg.sigma_table):
        return SurfaceTensionTable.load(cfg.sigma_table)
    # build from scratch and persist when a path was requested
    eps_fine = float(min(cfg.epsilons))
    grid_f = TorusGrid(cfg.d, int(round(1 / eps_fine)), scale=eps_fine)
    gmax = float(np.linalg.norm(
        gradient(np.asarray(f_sample).ravel(), grid_f), axis=0).max())
    p_max = _extra_float(cfg, "table.p_max", 3.0 * max(gmax, 1.0))
    sample_grid = TorusGrid(cfg.d, _extra_int(cfg, "table.l", 8))
    mc = MCParams(seed=cfg.seeds[0] + 5000,
                  burn_in=_extra_float(cfg, "table.burn_in", 0) or None,
                  horizon=_extra_float(cfg, "table.horizon", 0) or None,
                  dt=_extra_float(cfg, "table.dt", 0) or None)
    table = build_sigma_table(cfg.potential, sample_grid, p_max,
                              _extra_int(cfg, "table.npts", 9), mc)
    if cfg.sigma_table:
        table.save(cfg.sigma_table)
        manifest.add_output(cfg.sigma_table)
    return table


def _hydro_job(args):
    (spec_dict, eps, seed, f_id, dt, record_times) = args
    spec = PotentialSpec.from_dict(spec_dict)
    f_fn, d = INITIAL_CONDITIONS[f_id]
    f = sample_on_torus(f_fn, d, eps)
    times, frames, grid = simulate_rescaled(spec, f, eps, seed=seed, T=1.0,
                                            dt=dt, record_times=record_times)
    return eps, seed, times, frames


def run_hydro_limit(cfg, manifest=None):
    """Hydrodynamic-limit experiment: per (eps, replica) the rescaled
    dynamic against the homogenized reference at the finest listed eps,
    E(eps) = int_0^1 eps^d sum |u - ubar|^2 dt, and the log-log rate fit.

    Returns the result table; writes CSV + manifest when given one.
    """
    cfg.validate()
    if manifest is None:
        manifest = Manifest(cfg.to_dict(), __version__)
    eps_list = sorted((float(e) for e in cfg.epsilons), reverse=True)
    eps_fine = eps_list[-1]
    f_fn, d = INITIAL_CONDITIONS[cfg.initial_condition]
    record_times = np.linspace(0.0, 1.0, _extra_int(cfg, "hydro.frames", 17))

    f_fine = sample_on_torus(f_fn, d, eps_fine)
    table = _load_or_build_table(cfg, manifest, f_fine)
    t_ref, ref_frames, grid_ref = solve_homogenized(
        table, f_fine, eps_fine, T=1.0, record_times=record_times)

    jobs = [(cfg.potential.to_dict(), eps, seed, cfg.initial_condition,
             cfg.dt, record_times)
            for eps in eps_list for seed in cfg.seeds]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_hydro_job, jobs))
    else:
        results = [_hydro_job(j) for j in jobs]
    results.sort(key=lambda r: (-r[0], r[1]))

    n_fine = grid_ref.n
    rows = []
    errors = {}
    for eps, seed, times, frames in results:
        n = int(round(1.0 / eps))
        grid = TorusGrid(d, n, scale=eps)
        stride = n_fine // n
        idx = grid_ref.site_index(grid.coordinates() * stride)
        e_t = np.empty(len(times))
        for k in range(len(times)):
            kref = int(np.argmin(np.abs(t_ref - times[k])))
            diff = frames[k] - ref_frames[kref][idx]
            e_t[k] = eps ** d * (diff ** 2).sum()
        E = float(np.trapezoid(e_t, times))
        errors.setdefault(eps, []).append(E)
        rows.append([eps, seed, E])

    eps_arr = np.array(sorted(errors, reverse=True))
    means = np.array([np.mean(errors[e]) for e in eps_arr])
    sems = np.array([np.std(errors[e], ddof=1) / np.sqrt(len(errors[e]))
                     if len(errors[e]) > 1 else 0.0 for e in eps_arr])
    # weighted least squares on log E vs log eps
    x = np.log(eps_arr)
    y = np.log(means)
    w = np.ones_like(y) if np.any(sems == 0) else (means / sems) ** 2
    W = np.diag(w)
    A = np.stack([x, np.ones_like(x)], axis=1)
    cov = np.linalg.inv(A.T @ W @ A)
    beta = cov @ A.T @ W @ y
    theta, theta_se = float(beta[0]), float(np.sqrt(cov[0, 0]))
    # delta-method contribution of the per-eps errors to log E
    if not np.any(sems == 0):
        theta_se = float(np.sqrt(cov[0, 0]))

    result = {
        "eps": eps_arr.tolist(), "E_mean": means.tolist(),
        "E_stderr": sems.tolist(), "theta_hat": theta,
        "theta_stderr": theta_se,
        "monotone_decreasing": bool(np.all(np.diff(means) < 0)),
    }
    out = _ensure_outdir(cfg)
    path = os.path.join(out, "hydro_limit.csv")
    write_csv(path, ["eps", "seed", "E"], rows, manifest.config_hash)
    manifest.add_output(path)
    spath = os.path.join(out, "hydro_limit_summary.csv")
    write_csv(spath, ["eps", "E_mean", "E_stderr"],
              list(zip(eps_arr, means, sems)), manifest.config_hash)
    manifest.add_output(spath)
    # snapshot frames of the coarsest and finest runs at t = 1 for figures
    for eps, seed, times, frames in results:
        if seed == cfg.seeds[0] and eps in (eps_arr[0], eps_arr[-1]):
            n = int(round(1.0 / eps))
            fpath = os.path.join(out, f"snapshot_eps{n}.gphi")
            write_frames(fpath, d, n, times[-1:], frames[-1:])
            manifest.add_output(fpath)
    rpath = os.path.join(out, f"reference_eps{n_fine}.gphi")
    write_frames(rpath, d, n_fine, t_ref[-1:], ref_frames[-1:])
    manifest.add_output(rpath)
    manifest.results["hydro_limit"] = result
    return result


_DISPATCH = {
    "simulate": _exp_simulate,
    "surface-tension": _exp_surface_tension,
    "tails": _exp_tails,
    "exit-times": _exp_exit_times,
    "moderated": _exp_moderated,
    "flux-weak-norm": _exp_flux_weak_norm,
    "heat-kernel": _exp_heat_kernel,
    "two-scale": _exp_two_scale,
    "hydro-limit": run_hydro_limit,
}


def run_named_experiment(cfg):
    """Validate, dispatch, write outputs and the JSON manifest; returns the
    manifest."""
    cfg.validate()
    manifest = Manifest(cfg.to_dict(), __version__)
    body = _DISPATCH[cfg.experiment]
    if body is run_hydro_limit:
        body(cfg, manifest)
    else:
        body(cfg, manifest)
    out = _ensure_outdir(cfg)
    mpath = os.path.join(out, "manifest.json")
    manifest.write(mpath)
    return manifest
