"""Kernel backend selection.

The compiled Cython module is preferred. Set ``RAPOLAB_PURE_PYTHON=1`` to force
the numpy fallback (useful for debugging and for the backend benchmark).
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND: str

if os.environ.get("RAPOLAB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

mlp_forward = _impl.mlp_forward
mlp_backward = _impl.mlp_backward
sample_bins = _impl.sample_bins
rank_reward_matrix = _impl.rank_reward_matrix

__all__ = ["BACKEND", "mlp_forward", "mlp_backward", "sample_bins", "rank_reward_matrix"]
