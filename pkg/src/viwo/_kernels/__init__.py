"""IMU propagation kernels: compiled core with a pure-Python fallback.

The compiled extension is selected automatically when present; set the
environment variable VIWO_PURE_PYTHON=1 to force the fallback (used by the
benchmark to compare both backends).
"""

import os

from . import _fallback
from ._fallback import (  # noqa: F401
    MODE_FULL_INVARIANT,
    MODE_PARTIAL_INVARIANT,
    MODE_STANDARD,
    error_matrices,
    rk4_imu_step,
    transition,
)

if os.environ.get("VIWO_PURE_PYTHON"):
    _impl = _fallback
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _fallback

BACKEND = _impl.BACKEND_NAME
imu_step = _impl.imu_step
