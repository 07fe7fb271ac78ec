#!/usr/bin/env python3
"""Render publication-style figures from gradphi experiment artifacts.

Reads only emitted files (the JSON manifest, CSV tables, GPHI frame
snapshots) and never recomputes physics.  Re-rendering is idempotent.

Usage:
    python render.py --manifest out/manifest.json --kind hydro-loglog \
        --out fig.png

Kinds: hydro-loglog, snapshot-pair, tails, surface-tension, exit-times.
Exits 2 on missing/empty data, 1 on other errors.
"""

import argparse
import json
import os
import struct
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


class MissingColumn(RuntimeError):
    pass


class EmptyData(RuntimeError):
    pass


def read_csv(path):
    """(columns, float array) for a gradphi CSV (trailing manifest
    comment ignored)."""
    with open(path) as fh:
        cols = fh.readline().strip().split(",")
        rows = [[float(v) for v in line.split(",")]
                for line in fh
                if line.strip() and not line.startswith("#")]
    if not rows:
        raise EmptyData(f"{path}: no data rows")
    return cols, np.array(rows)


def col(cols, rows, name):
    if name not in cols:
        raise MissingColumn(f"column {name!r} not in {cols}")
    return rows[:, cols.index(name)]


def read_frames(path):
    """Parse the documented GPHI binary frame format."""
    with open(path, "rb") as fh:
        if fh.read(4) != b"GPHI":
            raise EmptyData(f"{path}: not a GPHI file")
        version, d, n = struct.unpack("<III", fh.read(12))
        count, = struct.unpack("<I", fh.read(4))
        if count == 0:
            raise EmptyData(f"{path}: no frames")
        times = np.empty(count)
        frames = np.empty((count, n ** d))
        for k in range(count):
            times[k], = struct.unpack("<d", fh.read(8))
            frames[k] = np.frombuffer(fh.read(8 * n ** d), dtype="<f8")
    return d, n, times, frames


def _resolve(manifest, path):
    """Artifacts live next to manifest.json; fall back to that directory
    when the recorded (possibly CWD-relative) path is not visible."""
    if os.path.exists(path):
        return path
    alt = os.path.join(manifest.get("_dir", ""), os.path.basename(path))
    if os.path.exists(alt):
        return alt
    raise EmptyData(f"artifact {path!r} not found on disk")


def _artifact(manifest, suffix):
    for path in manifest["outputs"]:
        if path.endswith(suffix):
            return _resolve(manifest, path)
    raise EmptyData(f"no artifact ending in {suffix!r} in the manifest")


def render_hydro_loglog(manifest, out):
    path = _artifact(manifest, "hydro_limit_summary.csv")
    cols, rows = read_csv(path)
    eps = col(cols, rows, "eps")
    E = col(cols, rows, "E_mean")
    se = col(cols, rows, "E_stderr")
    res = manifest.get("results", {}).get("hydro_limit", {})
    theta = res.get("theta_hat")

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.errorbar(eps, E, yerr=3 * se, fmt="o-", capsize=3, color="tab:blue")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(r"$\varepsilon$")
    ax.set_ylabel(r"$E(\varepsilon)$")
    title = "Hydrodynamic limit: rescaled dynamics vs homogenized profile"
    if theta is not None:
        x = np.array([eps.min(), eps.max()])
        anchor = E[np.argmax(eps)]
        ax.plot(x, anchor * (x / eps.max()) ** theta, "k--", lw=1,
                label=rf"fit $\varepsilon^{{{theta:.2f}}}$")
        ax.legend()
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def render_snapshot_pair(manifest, out):
    snaps = sorted((p for p in manifest["outputs"]
                    if os.path.basename(p).startswith("snapshot_eps")),
                   key=lambda p: int("".join(filter(str.isdigit,
                                                    os.path.basename(p)))))
    if len(snaps) < 2:
        raise EmptyData("need two snapshot_eps*.gphi artifacts")
    refs = [p for p in manifest["outputs"]
            if os.path.basename(p).startswith("reference_eps")]
    if not refs:
        raise EmptyData("no reference_eps*.gphi artifact in the manifest")
    panels = [_resolve(manifest, p) for p in (snaps[0], snaps[-1], refs[0])]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.6),
                             subplot_kw={"projection": "3d"})
    for ax, path in zip(axes, panels):
        d, n, times, frames = read_frames(path)
        if d != 2:
            raise EmptyData("snapshot panels need d = 2 frames")
        field = frames[-1].reshape(n, n)
        xs = np.arange(n) / n
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        ax.plot_surface(X, Y, field, cmap="viridis", linewidth=0)
        label = os.path.basename(path).replace(".gphi", "")
        ax.set_title(label, fontsize=8)
        ax.set_zlim(-1.8, 1.8)
        ax.tick_params(labelsize=6)
    fig.suptitle("Interface snapshots at t = 1: dynamics at two "
                 r"$\varepsilon$ and the deterministic profile", fontsize=9)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def render_tails(manifest, out):
    path = _artifact(manifest, "tails.csv")
    cols, rows = read_csv(path)
    K = col(cols, rows, "K")
    tail = col(cols, rows, "tail")
    res = manifest.get("results", {}).get("tails", {})
    r = res.get("exponent", 3.0)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(K ** r, tail, "o-")
    ax.set_xlabel(rf"$K^{{{r:g}}}$")
    ax.set_ylabel(r"$P[|\nabla\varphi| \geq K]$")
    slope = res.get("slope")
    if slope is not None:
        ax.set_title(f"gradient tail, regression slope {slope:.3g} "
                     f"(R$^2$ {res.get('r_squared', float('nan')):.3f})",
                     fontsize=9)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def render_surface_tension(manifest, out):
    path = _artifact(manifest, "surface_tension.csv")
    cols, rows = read_csv(path)
    sigma = col(cols, rows, "sigma")
    err = col(cols, rows, "sigma_err")
    pnorm = np.linalg.norm(
        rows[:, [i for i, c in enumerate(cols) if c.startswith("p")
                 and not c.startswith("p_")]], axis=1)
    order = np.argsort(pnorm)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.errorbar(pnorm[order], sigma[order], yerr=3 * err[order], fmt="o-",
                capsize=3)
    ax.set_xlabel(r"$|p|$")
    ax.set_ylabel(r"$\bar\sigma_L(p)$")
    ax.set_title("surface tension estimates", fontsize=9)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def render_exit_times(manifest, out):
    path = _artifact(manifest, "exit_times.csv")
    cols, rows = read_csv(path)
    T = col(cols, rows, "T")
    p = col(cols, rows, "probability")
    lo = col(cols, rows, "wilson_low")
    hi = col(cols, rows, "wilson_high")
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.errorbar(T, p, yerr=[p - lo, hi - p], fmt="o-", capsize=3)
    ax.set_xscale("log")
    ax.set_xlabel("T")
    ax.set_ylabel("confinement probability")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


KINDS = {
    "hydro-loglog": render_hydro_loglog,
    "snapshot-pair": render_snapshot_pair,
    "tails": render_tails,
    "surface-tension": render_surface_tension,
    "exit-times": render_exit_times,
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--manifest", required=True)
    ap.add_argument("--kind", required=True, choices=sorted(KINDS))
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    try:
        with open(args.manifest) as fh:
            manifest = json.load(fh)
        manifest["_dir"] = os.path.dirname(os.path.abspath(args.manifest))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read manifest: {exc}", file=sys.stderr)
        return 2
    try:
        KINDS[args.kind](manifest, args.out)
    except (MissingColumn, EmptyData) as exc:
        print(f"{args.kind}: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
