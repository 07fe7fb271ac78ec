"""gradphi: a simulation laboratory for gradient interface models.

Integrates the lattice Langevin dynamics of the gradient interface model
with convex (possibly degenerate) potentials, estimates the surface
tension and its derivatives, solves the homogenized nonlinear parabolic
equation, and measures the diagnostic functionals (heat kernels, moderated
environments, multiscale norms, two-scale expansion error terms) used to
study the hydrodynamic limit at desk scale.
"""

__version__ = "0.1.0"

from .lattice import TorusGrid, gradient, divergence, elliptic_apply
from .potential import PotentialSpec

__all__ = ["TorusGrid", "gradient", "divergence", "elliptic_apply",
           "PotentialSpec", "__version__"]
