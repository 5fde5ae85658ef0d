"""Hot-kernel backend selection.

The compiled Cython module is preferred when importable; otherwise the
pure numpy fallback is used.  Set AGGNORM_PURE_KERNELS=1 to force the
fallback (the benchmark and the equivalence tests import both backends
directly, bypassing this switch).
"""

import os

from . import pure

BACKEND = "pure"

if not os.environ.get("AGGNORM_PURE_KERNELS"):
    try:
        from . import _speedups  # noqa: F401

        BACKEND = "compiled"
    except ImportError:
        pass

if BACKEND == "compiled":
    lstm_forward = _speedups.lstm_forward
    lstm_backward = _speedups.lstm_backward
    charcnn_forward = _speedups.charcnn_forward
    charcnn_backward = _speedups.charcnn_backward
else:
    lstm_forward = pure.lstm_forward
    lstm_backward = pure.lstm_backward
    charcnn_forward = pure.charcnn_forward
    charcnn_backward = pure.charcnn_backward

__all__ = [
    "BACKEND",
    "lstm_forward",
    "lstm_backward",
    "charcnn_forward",
    "charcnn_backward",
    "pure",
]
