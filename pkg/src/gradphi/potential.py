"""Convex interaction potentials with polynomial Hessian growth.

Two variants are provided:

* ``degenerate_radial``: V(x) = c * (|x| - R0)_+^r with r > 2.  The
  potential is exactly flat inside the ball of radius R0, C^2 across the
  boundary, and its Hessian grows like |x|^(r-2); radial and tangential
  eigenvalues are available in closed form.  Nothing in the theory pins a
  specific potential; this canonical family is a choice made for its
  closed-form derivatives.
* ``quadratic``: V(x) = c |x|^2 / 2, the r = 2 baseline.  It produces
  Ornstein-Uhlenbeck dynamics and exact Gaussian answers used as oracles
  throughout the test suite.

The eigenvalue functionals of a slope p are

    lambda_plus(p)  = max(1, largest eigenvalue of D2V(p)),
    lambda_minus(p) = inf_q inf_{|xi|<=1} int_0^1 xi . D2V((1-t)p + t q) xi dt,

where the double infimum is evaluated numerically (q = p is always in the
candidate set, so the result never exceeds the smallest eigenvalue of
D2V(p)).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

__all__ = ["PotentialSpec", "EigenvalueBounds", "potential_eval",
           "lambda_plus", "lambda_minus", "verify_assumption_A"]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)
_GL_T = 0.5 * (_GL_NODES + 1.0)   # quadrature nodes on [0, 1]
_GL_W = 0.5 * _GL_WEIGHTS


@dataclass(frozen=True)
class PotentialSpec:
    variant: str = "degenerate_radial"
    r: float = 3.0
    R0: float = 1.0
    c: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.variant not in ("degenerate_radial", "quadratic"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "degenerate_radial":
            if not self.r > 2:
                raise ValueError("degenerate_radial requires r > 2")
            if self.R0 < 0:
                raise ValueError("R0 must be >= 0")
        if not self.c > 0:
            raise ValueError("c must be > 0")

    @property
    def growth_exponent(self):
        """Exponent r with the convention r = 2 for the quadratic variant."""
        return 2.0 if self.variant == "quadratic" else self.r

    def to_dict(self):
        return {"variant": self.variant, "r": self.r, "R0": self.R0, "c": self.c}

    @classmethod
    def from_dict(cls, d):
        return cls(variant=d["variant"], r=float(d.get("r", 3.0)),
                   R0=float(d.get("R0", 1.0)), c=float(d.get("c", 1.0)))


def _radial_eigs(spec, t):
    """Radial and tangential Hessian eigenvalues at radius t (vectorized).

    rho(t) = c r (r-1) (t-R0)_+^(r-2),  tau(t) = c r (t-R0)_+^(r-1) / t,
    with the t = 0 limit set to 0.
    """
    r, R0, c = spec.r, spec.R0, spec.c
    s = np.maximum(np.asarray(t, dtype=np.float64) - R0, 0.0)
    rho = c * r * (r - 1.0) * s ** (r - 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where(t > 0, c * r * s ** (r - 1.0) / np.where(t > 0, t, 1.0), 0.0)
    return rho, tau


def potential_eval(spec, x):
    """Evaluate (V, DV, D2V) at slope(s) x.

    x : (..., d) array of slopes. Returns V (...,), DV (..., d),
    D2V (..., d, d).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = x.shape[-1]
    if spec.variant == "quadratic":
        V = 0.5 * spec.c * (x ** 2).sum(axis=-1)
        DV = spec.c * x
        D2V = np.broadcast_to(spec.c * np.eye(d), x.shape + (d,)).copy()
        return V, DV, D2V
    r, R0, c = spec.r, spec.R0, spec.c
    t = np.linalg.norm(x, axis=-1)
    s = np.maximum(t - R0, 0.0)
    V = c * s ** r
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_t = np.where(t > 0, 1.0 / np.where(t > 0, t, 1.0), 0.0)
    xhat = x * inv_t[..., None]
    DV = (c * r * s ** (r - 1.0))[..., None] * xhat
    rho, tau = _radial_eigs(spec, t)
    eye = np.eye(d)
    proj = xhat[..., :, None] * xhat[..., None, :]
    D2V = tau[..., None, None] * (eye - proj) + rho[..., None, None] * proj
    return V, DV, D2V


def potential_value(spec, x):
    """V alone (no derivative allocations), for quadrature hot paths."""
    x = np.asarray(x, dtype=np.float64)
    if spec.variant == "quadratic":
        return 0.5 * spec.c * (x ** 2).sum(axis=-1)
    t = np.linalg.norm(x, axis=-1)
    return spec.c * np.maximum(t - spec.R0, 0.0) ** spec.r


def flux(spec, x):
    """DV(x) alone, for hot paths. x : (..., d)."""
    x = np.asarray(x, dtype=np.float64)
    if spec.variant == "quadratic":
        return spec.c * x
    t = np.linalg.norm(x, axis=-1)
    s = np.maximum(t - spec.R0, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(t > 0, spec.c * spec.r * s ** (spec.r - 1.0)
                        / np.where(t > 0, t, 1.0), 0.0)
    return coef[..., None] * x


def lambda_plus(spec, p):
    """max(1, largest eigenvalue of D2V(p))."""
    p = np.asarray(p, dtype=np.float64)
    if spec.variant == "quadratic":
        return max(1.0, spec.c)
    rho, tau = _radial_eigs(spec, np.linalg.norm(p))
    return max(1.0, float(rho), float(tau))


def lambda_plus_field(spec, slopes):
    """lambda_plus at every row of slopes (..., d); vectorized."""
    slopes = np.asarray(slopes, dtype=np.float64)
    if spec.variant == "quadratic":
        return np.full(slopes.shape[:-1], max(1.0, spec.c))
    rho, tau = _radial_eigs(spec, np.linalg.norm(slopes, axis=-1))
    return np.maximum(1.0, np.maximum(rho, tau))


def hessian_min_eig_field(spec, slopes):
    """Smallest eigenvalue of D2V at every row of slopes (pointwise, not
    the segment-infimum functional)."""
    slopes = np.asarray(slopes, dtype=np.float64)
    if spec.variant == "quadratic":
        return np.full(slopes.shape[:-1], spec.c)
    rho, tau = _radial_eigs(spec, np.linalg.norm(slopes, axis=-1))
    return np.minimum(rho, tau)


def _segment_hessian(spec, p, q):
    """int_0^1 D2V((1-t)p + t q) dt by 32-point Gauss-Legendre."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    pts = (1.0 - _GL_T)[:, None] * p[None, :] + _GL_T[:, None] * q[None, :]
    _, _, H = potential_eval(spec, pts)
    return np.tensordot(_GL_W, H, axes=(0, 0))


def _segment_min_eig(spec, p, q):
    M = _segment_hessian(spec, p, q)
    return float(np.linalg.eigvalsh(M)[0])


def lambda_minus(spec, p, n_radial=8, n_angular=7, refine=True):
    """Double-infimum lower eigenvalue functional at slope p.

    The q-search grid is polar in the plane spanned by p and one
    orthogonal direction (the radial family is rotation invariant, so the
    minimizing segment can be taken in such a plane); q = p is always a
    candidate.  Doubling (n_radial, n_angular) produces a superset of the
    coarser grid, so refinement never increases the returned value.
    """
    p = np.asarray(p, dtype=np.float64)
    if spec.variant == "quadratic":
        return spec.c
    d = p.size
    m = float(np.linalg.norm(p))
    # orthonormal frame (e_par, e_perp) containing p
    if m > 0:
        e_par = p / m
    else:
        e_par = np.eye(d)[0]
    if d == 1:
        e_perp = None
    else:
        trial = np.eye(d)[1] if abs(e_par[0]) > 0.9 else np.eye(d)[0]
        e_perp = trial - (trial @ e_par) * e_par
        e_perp /= np.linalg.norm(e_perp)

    radii = np.unique(np.concatenate([
        [0.0, spec.R0, m],
        np.linspace(0.0, max(2.0 * m, 2.0 * spec.R0, 1.0), n_radial + 1),
    ]))
    if d == 1:
        candidates = [np.array([rr * sgn]) for rr in radii for sgn in (1.0, -1.0)]
    else:
        angles = np.linspace(0.0, np.pi, n_angular)
        candidates = [
            rr * (np.cos(a) * e_par + np.sin(a) * e_perp)
            for rr in radii for a in angles
        ]
    candidates.append(p.copy())

    best_val = np.inf
    best_q = p.copy()
    for q in candidates:
        v = _segment_min_eig(spec, p, q)
        if v < best_val:
            best_val, best_q = v, q
    if refine and best_val > 0.0:
        res = minimize(
            lambda qv: _segment_min_eig(spec, p, qv),
            best_q, method="Nelder-Mead",
            options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 400},
        )
        if res.fun < best_val:
            best_val = float(res.fun)
    return max(best_val, 0.0)


def _lambda_minus_radial_table(spec, t_max, nodes=256):
    """Cache lambda_minus as a function of |p| (rotational symmetry)."""
    key = ("lm_table", round(float(t_max), 9), nodes)
    if key not in spec._cache:
        ts = np.linspace(0.0, t_max, nodes)
        probe = np.zeros(2)
        vals = np.empty(nodes)
        for i, t in enumerate(ts):
            probe[0] = t
            vals[i] = lambda_minus(spec, probe)
        spec._cache[key] = (ts, vals)
    return spec._cache[key]


def lambda_minus_field(spec, slopes):
    """lambda_minus at every row of slopes via a cached radial table.

    Exact for the quadratic variant; for the radial family the value
    depends only on |p| and is linearly interpolated between table nodes.
    """
    slopes = np.asarray(slopes, dtype=np.float64)
    if spec.variant == "quadratic":
        return np.full(slopes.shape[:-1], spec.c)
    t = np.linalg.norm(slopes, axis=-1)
    t_max = max(float(t.max()) * 1.25, spec.R0 + 1.0)
    ts, vals = _lambda_minus_radial_table(spec, t_max)
    if float(t.max()) > ts[-1]:
        ts, vals = _lambda_minus_radial_table(spec, float(t.max()) * 1.25)
    return np.interp(t, ts, vals)


@dataclass
class EigenvalueBounds:
    lambda_plus: float
    lambda_minus: float

    def __post_init__(self):
        if self.lambda_plus < 1.0:
            raise ValueError("lambda_plus must be >= 1")
        if self.lambda_minus < 0.0:
            raise ValueError("lambda_minus must be >= 0")


class ConvexityViolation(RuntimeError):
    pass


def verify_assumption_A(spec, radius_range=(2.0, 10.0), n_samples=500, seed=0,
                        margin=0.05):
    """Empirical check of the two-sided Hessian growth bound.

    Samples slopes with |x| in radius_range (clipped below to
    R0*(1+margin)), reports the empirical constants c_minus, c_plus making

        c_minus |x|^(r-2) <= eig(D2V(x)) <= c_plus |x|^(r-2)

    hold on the sample, and the empirical radius R1 such that
    lambda_minus(p) >= c_lemma * (1+|p|)^(r-2) + 1 for all sampled
    |p| >= R1 / 2.  Raises ConvexityViolation if a sampled Hessian is
    indefinite.
    """
    rng = np.random.default_rng(seed)
    if spec.variant == "quadratic":
        return {
            "c_minus": spec.c, "c_plus": spec.c, "R1": 2.0,
            "c_lemma": spec.c, "min_eig_sampled": spec.c, "r": 2.0,
        }
    d = 2
    lo = max(radius_range[0], spec.R0 * (1.0 + margin))
    hi = radius_range[1]
    radii = rng.uniform(lo, hi, n_samples)
    theta = rng.uniform(0.0, 2.0 * np.pi, n_samples)
    pts = radii[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    _, _, H = potential_eval(spec, pts)
    eigs = np.linalg.eigvalsh(H)
    if eigs.min() < -1e-12:
        raise ConvexityViolation(f"indefinite Hessian: min eig {eigs.min():g}")
    growth = radii ** (spec.r - 2.0)
    c_minus = float((eigs[:, 0] / growth).min())
    c_plus = float((eigs[:, -1] / growth).max())

    # scan lambda_minus along a ray to locate the Lemma-style radius R1
    ray = np.linspace(max(2.0, spec.R0 + 0.5), 2.0 * hi, 24)
    lm = np.array([lambda_minus(spec, np.array([t, 0.0])) for t in ray])
    plus_growth = (1.0 + ray) ** (spec.r - 2.0)
    c_lemma = 0.5 * float((lm[-1] - 1.0) / plus_growth[-1]) if lm[-1] > 1.0 else 0.0
    ok = lm >= c_lemma * plus_growth + 1.0
    idx = np.nonzero(~ok)[0]
    first_good = (idx.max() + 1) if idx.size else 0
    if first_good >= ray.size:
        R1 = float("inf")
    else:
        R1 = 2.0 * float(ray[first_good])
    return {
        "c_minus": c_minus, "c_plus": c_plus, "R1": R1, "c_lemma": c_lemma,
        "min_eig_sampled": float(eigs.min()), "r": spec.r,
    }
