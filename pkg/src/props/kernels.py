"""Kernel backend selection.

The compiled extension is preferred when it built; set PROPS_PURE_PYTHON=1
to force the pure-Python fallback (used by the benchmark and parity tests).
"""

from __future__ import annotations

import os

if os.environ.get("PROPS_PURE_PYTHON"):
    from . import _pykernels as _impl
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        from . import _pykernels as _impl  # type: ignore[no-redef]

BACKEND = _impl.BACKEND_NAME

INT64_MIN = _impl.INT64_MIN
INT64_MAX = _impl.INT64_MAX
Q_FRAC_BITS = _impl.Q_FRAC_BITS
Q_ONE = _impl.Q_ONE

encode_canonical = _impl.encode_canonical
q_sat = _impl.q_sat
q_add = _impl.q_add
q_from_int = _impl.q_from_int
q_mul = _impl.q_mul
q_dot = _impl.q_dot
