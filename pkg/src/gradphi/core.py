"""Backend selection for the stepping kernels.

The compiled extension is preferred when importable; set
GRADPHI_BACKEND=python (or =cython) to force a choice.  Trajectories are
bit-reproducible for a fixed (config, seed, backend); the two backends
consume identical noise bits and agree to floating-point summation order.
"""

import os

from . import _core_py

_choice = os.environ.get("GRADPHI_BACKEND", "auto").lower()

if _choice in ("auto", "cython", "c"):
    try:
        from . import _core_cy as _impl
    except ImportError:
        if _choice != "auto":
            raise
        _impl = _core_py
else:
    _impl = _core_py

BACKEND = _impl.BACKEND
POT_QUADRATIC = _core_py.POT_QUADRATIC
POT_DEGENERATE_RADIAL = _core_py.POT_DEGENERATE_RADIAL

langevin_block = _impl.langevin_block
parabolic_block = _impl.parabolic_block


def backend_name():
    return BACKEND


def pot_code(spec):
    return POT_QUADRATIC if spec.variant == "quadratic" else POT_DEGENERATE_RADIAL
