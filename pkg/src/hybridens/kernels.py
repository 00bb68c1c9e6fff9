"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. Set ``HYBRIDENS_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("HYBRIDENS_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
legendre_table = _impl.legendre_table
l96_tendency = _impl.l96_tendency
l96_integrate = _impl.l96_integrate
fair_crps_points = _impl.fair_crps_points

__all__ = ["BACKEND", "legendre_table", "l96_tendency", "l96_integrate", "fair_crps_points"]
