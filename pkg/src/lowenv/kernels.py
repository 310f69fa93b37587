"""Backend selection for the hot kernels.

The compiled extension is used when it was built; setting the environment
variable ``LOWENV_BACKEND=python`` forces the pure-Python twin.
"""

import os

from . import _pykernels

if os.environ.get("LOWENV_BACKEND", "").lower() == "python":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = _impl.BACKEND
upwind_advect = _impl.upwind_advect
cut_fractions = _impl.cut_fractions

__all__ = ["BACKEND", "upwind_advect", "cut_fractions"]
