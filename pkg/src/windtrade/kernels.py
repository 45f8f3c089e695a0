"""Kernel selection: compiled extension when available, numpy fallback otherwise.

Set ``WINDTRADE_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
hjb_interval = _kernels_py.hjb_interval
simulate_impact = _kernels_py.simulate_impact

if not os.environ.get("WINDTRADE_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"
        hjb_interval = _compiled.hjb_interval
        simulate_impact = _compiled.simulate_impact
