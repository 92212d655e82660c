"""Pick the compiled element kernel when available, numpy otherwise.

Set ``SDFLOW_BACKEND=python`` to force the fallback.
"""

import os

import numpy as np

from . import _pykernel
from .timequad import EdgeCollapseError, gauss_legendre_unit, min_path_norm
from .geometry import EPS_GEOM

try:
    if os.environ.get("SDFLOW_BACKEND", "").lower() == "python":
        raise ImportError("compiled kernel disabled by SDFLOW_BACKEND")
    from . import _kernels
except ImportError:
    _kernels = None

BACKEND = "cython" if _kernels is not None else "python"

_GL_S, _GL_W = (np.ascontiguousarray(a) for a in gauss_legendre_unit())


def _compiled_element_system(x_old, x_new, p, q, tau, weighted=False, want_jac=True):
    m = x_old.shape[0]
    res = np.empty(4 * m)
    blocks = np.empty((m, 8, 8)) if want_jac else np.empty((0, 8, 8))
    bad = _kernels.element_system(x_old, x_new, p, q, tau, bool(weighted), bool(want_jac),
                                  EPS_GEOM, _GL_S, _GL_W, res, blocks)
    if bad >= 0:
        a = np.roll(x_old, -1, axis=0) - x_old
        b = np.roll(x_new, -1, axis=0) - x_new - a
        raise EdgeCollapseError(bad, float(min_path_norm(a[bad], b[bad])))
    return res, (blocks if want_jac else None)


element_system = _compiled_element_system if _kernels is not None else _pykernel.element_system


def use_backend(name: str) -> None:
    """Switch kernels at runtime (benchmarks and equivalence tests)."""
    global element_system, BACKEND
    if name == "python":
        element_system = _pykernel.element_system
    elif name == "cython":
        if _kernels is None:
            raise ImportError("compiled kernel is not built")
        element_system = _compiled_element_system
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
