"""Hot-kernel backend selection.

The compiled Cython core is preferred; the numpy fallback is selected when
the extension is missing or when ORCHARD_KERNELS=python forces it. Both
backends produce bit-identical float32 results (verified in the test suite),
so the choice only affects speed. `benchmarks/bench_kernels.py` compares
them.
"""

import os
import warnings

from . import fallback

_requested = os.environ.get("ORCHARD_KERNELS", "auto").lower()

if _requested not in ("auto", "python", "compiled"):
    raise ValueError(
        f"ORCHARD_KERNELS={_requested!r} not understood; use auto, python or compiled"
    )

_impl = fallback
BACKEND = "python"

if _requested != "python":
    try:
        from . import _convcore

        _impl = _convcore
        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        warnings.warn(
            "orchard compiled kernels unavailable, using numpy fallback "
            "(build the extension for faster training)",
            RuntimeWarning,
            stacklevel=2,
        )

im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward


def get_backends():
    """Return {name: module} for every importable backend (for benchmarks
    and the equivalence tests)."""
    backends = {"python": fallback}
    try:
        from . import _convcore

        backends["compiled"] = _convcore
    except ImportError:
        pass
    return backends
