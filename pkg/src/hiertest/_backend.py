"""Select the compiled kernels when available, else the pure-Python ones.

Set ``HIERTEST_PURE_PYTHON=1`` to force the fallback (used by the benchmark
and by the backend-equivalence tests).
"""

import os

from . import _pykernels

if os.environ.get("HIERTEST_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    HAS_COMPILED = False
else:
    try:
        from . import _kernels as _impl

        HAS_COMPILED = True
    except ImportError:  # extension not built
        _impl = _pykernels
        HAS_COMPILED = False

BACKEND = "compiled" if HAS_COMPILED else "python"

lasso_cd = _impl.lasso_cd
lasso_path = _impl.lasso_path
complete_linkage = _impl.complete_linkage
betainc = _impl.betainc
