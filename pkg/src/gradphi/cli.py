"""Command-line surface.

Subcommands: simulate, surface-tension, heat-kernel, hydro-limit,
diagnostics, tails.  Global flags: --config, --seed, --out, --threads,
--quiet.  Exit codes: 0 success, 2 config error, 3 numerical failure.
"""

import argparse
import sys

from .experiments import (ConfigError, ExperimentConfig, UnknownExperiment,
                          run_named_experiment)
from .parabolic import NonFinite
from .potential import PotentialSpec

_DIAG_FLAGS = {
    "moderated": "moderated",
    "exit_times": "exit-times",
    "tails": "tails",
    "two_scale": "two-scale",
    "flux_weak_norm": "flux-weak-norm",
}


def _add_common(sub):
    sub.add_argument("--config", required=True,
                     help="INI experiment config file")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the first seed")
    sub.add_argument("--out", default=None, help="output directory override")
    sub.add_argument("--threads", type=int, default=1,
                     help="worker processes for independent jobs")
    sub.add_argument("--quiet", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="gradphi",
        description="Gradient interface model laboratory: Langevin "
                    "dynamics, surface tension, hydrodynamic limit.")
    subs = ap.add_subparsers(dest="command", required=True)

    for name, helptext in [
        ("simulate", "record stationary Langevin trajectories "
                     "(CSV: t,site,phi,grad*,flux*)"),
        ("surface-tension", "sigma, gradient and Hessian estimates per "
                            "slope (CSV: p*,sigma,sigma_err,grad*,"
                            "grad*_err,hess_ll,hess_err,L,r,R0,seed)"),
        ("hydro-limit", "rescaled dynamics vs homogenized reference "
                        "(CSV: eps,seed,E; summary: eps,E_mean,E_stderr)"),
        ("tails", "gradient exceedance table (CSV: K,tail)"),
    ]:
        sub = subs.add_parser(name, help=helptext)
        _add_common(sub)

    hk = subs.add_parser("heat-kernel",
                         help="heat kernel evolution (CSV: t,site,value "
                              "plus the energy series)")
    hk.add_argument("--config", default=None)
    hk.add_argument("--d", type=int, default=2)
    hk.add_argument("--n", type=int, default=9)
    hk.add_argument("--env", default="identity",
                    help="identity | from-trajectory:<frames.gphi>")
    hk.add_argument("--start-site", type=int, default=0)
    hk.add_argument("--t-max", type=float, default=1.0)
    hk.add_argument("--dt", type=float, default=1e-3)
    hk.add_argument("--seed", type=int, default=None)
    hk.add_argument("--out", default="out")
    hk.add_argument("--threads", type=int, default=1)
    hk.add_argument("--quiet", action="store_true")

    diag = subs.add_parser("diagnostics",
                           help="moderated environment, exit times, tails, "
                                "flux weak norms, two-scale report")
    _add_common(diag)
    for flag in _DIAG_FLAGS:
        diag.add_argument(f"--{flag.replace('_', '-')}", action="store_true")
    return ap


def _config_from_args(args, experiment):
    overrides = {}
    if args.out:
        overrides["out_dir"] = args.out
    if args.threads:
        overrides["threads"] = args.threads
    cfg = ExperimentConfig.from_ini(args.config, overrides)
    cfg.experiment = experiment
    if args.seed is not None:
        cfg.seeds = [args.seed] + [s for s in cfg.seeds if s != args.seed]
    return cfg.validate()


def _run_heat_kernel_flags(args):
    if args.config:
        cfg = _config_from_args(args, "heat-kernel")
    else:
        cfg = ExperimentConfig(
            experiment="heat-kernel",
            potential=PotentialSpec("quadratic"),
            d=args.d,
            initial_condition="sincos2d" if args.d == 2 else "sin1d",
            out_dir=args.out, dt=args.dt)
        cfg.extra.update({"heat.n": str(args.n),
                          "heat.env": args.env,
                          "heat.start_site": str(args.start_site),
                          "heat.t_max": str(args.t_max)})
    return run_named_experiment(cfg)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "heat-kernel":
            manifest = _run_heat_kernel_flags(args)
        elif args.command == "diagnostics":
            picked = [name for flag, name in _DIAG_FLAGS.items()
                      if getattr(args, flag)]
            if not picked:
                picked = ["moderated"]
            for name in picked:
                cfg = _config_from_args(args, name)
                manifest = run_named_experiment(cfg)
                if not args.quiet:
                    print(f"{name}: manifest {manifest.config_hash}")
            return 0
        else:
            cfg = _config_from_args(args, args.command)
            manifest = run_named_experiment(cfg)
        if not args.quiet:
            print(f"{args.command}: wrote "
                  f"{len(manifest.outputs)} artifacts "
                  f"(manifest {manifest.config_hash})")
        return 0
    except (ConfigError, UnknownExperiment, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NonFinite, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
