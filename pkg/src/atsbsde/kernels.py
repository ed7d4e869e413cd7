"""Kernel backend selection.

The compiled extension is used when it was built and importable; setting the
environment variable ``ATSBSDE_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _kernels_py

_compiled = None
if os.environ.get("ATSBSDE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py
BACKEND = "compiled" if _compiled is not None else "python"

gauss_cell_probs = _impl.gauss_cell_probs
clamped_weights = _impl.clamped_weights
weighted_sums = _impl.weighted_sums


def backend(name):
    """Return the kernel module called ``name`` (``"compiled"`` or ``"python"``)."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            from . import _ckernels
            return _ckernels
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def compiled_available():
    try:
        backend("compiled")
    except ImportError:
        return False
    return True
