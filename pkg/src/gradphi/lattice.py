"""Discrete torus geometry and discrete differential calculus.

Sites of the d-dimensional periodic lattice with n sites per side are
indexed row-major over the coordinates (x_1, ..., x_d): the linear index
is x_1 * n^(d-1) + ... + x_d.  All operators act through precomputed
neighbor tables so the dimension is a runtime parameter.

The rescaled operators (mesh size eps) are the same code with
scale = eps: every forward difference and every divergence picks up a
factor 1/scale.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["TorusGrid", "gradient", "divergence", "elliptic_apply", "laplacian"]


@dataclass(frozen=True)
class TorusGrid:
    """Periodic lattice with ``n`` sites per side in dimension ``d``.

    scale is the mesh size (1 for unscaled objects, eps for rescaled ones).
    """

    d: int
    n: int
    scale: float = 1.0
    _nbr: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if not self.scale > 0:
            raise ValueError("scale must be > 0")

    @property
    def nsites(self):
        return self.n ** self.d

    @property
    def shape(self):
        return (self.n,) * self.d

    def _tables(self):
        if "plus" not in self._nbr:
            idx = np.arange(self.nsites).reshape(self.shape)
            plus = np.empty((self.d, self.nsites), dtype=np.intp)
            minus = np.empty((self.d, self.nsites), dtype=np.intp)
            for i in range(self.d):
                plus[i] = np.roll(idx, -1, axis=i).ravel()
                minus[i] = np.roll(idx, 1, axis=i).ravel()
            self._nbr["plus"] = plus
            self._nbr["minus"] = minus
        return self._nbr["plus"], self._nbr["minus"]

    @property
    def neighbors_plus(self):
        """(d, nsites) linear indices of x + e_i."""
        return self._tables()[0]

    @property
    def neighbors_minus(self):
        """(d, nsites) linear indices of x - e_i."""
        return self._tables()[1]

    def coordinates(self):
        """(nsites, d) integer coordinates of every site."""
        idx = np.indices(self.shape).reshape(self.d, -1).T
        return idx

    def site_index(self, coords):
        """Linear index of integer coordinates (wraps periodically)."""
        coords = np.asarray(coords)
        c = np.mod(coords, self.n)
        strides = self.n ** np.arange(self.d - 1, -1, -1)
        return (c * strides).sum(axis=-1)

    def with_scale(self, scale):
        return TorusGrid(self.d, self.n, scale)


def gradient(u, grid):
    """Discrete gradient: (grad u)_i(x) = (u(x+e_i) - u(x)) / scale.

    u : (nsites,) field values; returns (d, nsites).
    """
    u = np.asarray(u, dtype=np.float64)
    plus, _ = grid._tables()
    return (u[plus] - u[None, :]) / grid.scale


def divergence(F, grid):
    """Discrete divergence: (div F)(x) = sum_i (F_i(x) - F_i(x-e_i)) / scale.

    F : (d, nsites) vector field; returns (nsites,).
    """
    F = np.asarray(F, dtype=np.float64)
    _, minus = grid._tables()
    out = np.zeros(grid.nsites)
    for i in range(grid.d):
        out += F[i] - F[i][minus[i]]
    return out / grid.scale


def elliptic_apply(a, u, grid, check_symmetry=True):
    """Apply the operator div(a grad u) for a site-wise SPD matrix field.

    a : (nsites, d, d); equals the divergence of x -> a(x) grad u(x).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (grid.nsites, grid.d, grid.d):
        raise ValueError(f"environment shape {a.shape} does not match grid")
    if check_symmetry and not np.allclose(a, np.swapaxes(a, 1, 2), atol=1e-12):
        raise ValueError("environment matrices must be symmetric")
    g = gradient(u, grid)
    flux = np.einsum("xij,jx->ix", a, g)
    return divergence(flux, grid)


def laplacian(u, grid):
    """Discrete Laplacian: sum_i (u(x+e_i) + u(x-e_i) - 2u(x)) / scale^2."""
    u = np.asarray(u, dtype=np.float64)
    plus, minus = grid._tables()
    out = np.zeros(grid.nsites)
    for i in range(grid.d):
        out += u[plus[i]] + u[minus[i]] - 2.0 * u
    return out / grid.scale ** 2
