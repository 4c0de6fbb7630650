"""Kernel backend selection.

The compiled extension is used when it imports; setting the environment
variable ``POISRATIO_PURE_PYTHON=1`` forces the pure-Python fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("POISRATIO_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"

lr_bounds = _impl.lr_bounds
lr_deviance = _impl.lr_deviance
risk_sums = _impl.risk_sums


def available_backends():
    """Mapping of backend name to module, for benchmarks and cross-checks."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels as compiled
    except ImportError:
        return out
    out["compiled"] = compiled
    return out
