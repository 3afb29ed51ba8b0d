"""Backend selection for the per-pixel kernels.

The compiled extension is used when it imports cleanly; setting
``MEMC_PURE_PYTHON=1`` forces the numpy fallback. Both expose the same
functions with the same argument order.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("MEMC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels

_threads = 1


def set_threads(n):
    """Thread count for the row-parallel gather loops (compiled backend only)."""
    global _threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = int(n)


def warp_forward(image, flow, kernels, K, use_bilinear=True):
    if _impl is _pykernels:
        return _pykernels.warp_forward(image, flow, kernels, K, use_bilinear)
    return _impl.warp_forward(image, flow, kernels, K, use_bilinear, _threads)


def warp_backward(image, flow, kernels, grad_out, K, use_bilinear=True):
    return _impl.warp_backward(image, flow, kernels, grad_out, K, use_bilinear)


def project_scatter(flow):
    return _impl.project_scatter(flow)


def fill_holes(flow, hole_mask):
    if _impl is _pykernels:
        return _pykernels.fill_holes(flow, hole_mask)
    return _impl.fill_holes(flow, hole_mask.astype("uint8"), _threads)


def project_backward(targets, count, grad_out):
    return _impl.project_backward(targets, count, grad_out)
