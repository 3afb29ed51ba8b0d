"""Adaptive warping: flow-guided sampling with per-pixel learned kernels.

Each output pixel gathers a K x K window of the input around the
flow-displaced location ``x + floor(f(x))``. Tap ``r`` is weighted by the
product of a learned coefficient and a bilinear coefficient that depends
only on the fractional part of the flow and on which quadrant of the window
the tap lies in. With K = 2 and unit kernels this is ordinary bilinear
warping.

Kernel channels map to taps row-major over the window: channel ``c`` is the
tap ``(c % K - (K/2 - 1), c // K - (K/2 - 1))`` in (horizontal, vertical)
order. Samples that fall outside the image are clamped to the border.
"""

import numpy as np

from . import kernels as _k
from .tensor import NonFiniteError, ShapeError, as_tensor


def check_kernel_size(K):
    if K < 2 or K % 2:
        raise ValueError(f"kernel window side must be even and >= 2, got {K}")


def tap_offsets(K):
    """(horizontal, vertical) offset arrays for the K*K kernel channels."""
    check_kernel_size(K)
    return _k._pykernels.tap_offsets(K)


def kernel_size_of(kernels):
    K = int(round(np.sqrt(kernels.shape[1])))
    if K * K != kernels.shape[1]:
        raise ShapeError(f"kernel field has {kernels.shape[1]} channels, not a square",
                         dim="channel")
    check_kernel_size(K)
    return K


def _check(image, flow, kernels=None):
    image = as_tensor(image, "image")
    flow = as_tensor(flow, "flow")
    if flow.shape[1] != 2:
        raise ShapeError(f"flow must have 2 channels, got {flow.shape[1]}", dim="channel")
    for axis, label in ((0, "batch"), (2, "height"), (3, "width")):
        if flow.shape[axis] != image.shape[axis]:
            raise ShapeError(f"flow/image {label} mismatch", dim=label)
        if kernels is not None and kernels.shape[axis] != image.shape[axis]:
            raise ShapeError(f"kernels/image {label} mismatch", dim=label)
    if not np.all(np.isfinite(flow)):
        raise NonFiniteError("flow contains NaN or Inf", stage="warp")
    if kernels is not None:
        kernels = as_tensor(kernels, "kernels")
    return image, flow, kernels


def make_bilinear_coefficients(flow, K):
    """Quadrant-replicated bilinear coefficients, shape (n, K*K, H, W)."""
    check_kernel_size(K)
    flow = as_tensor(flow, "flow")
    tu = flow[:, 0] - np.floor(flow[:, 0])
    tv = flow[:, 1] - np.floor(flow[:, 1])
    ru, rv = tap_offsets(K)
    out = np.empty((flow.shape[0], K * K) + flow.shape[2:])
    for c in range(K * K):
        out[:, c] = _k._pykernels.bilinear_weights(tu, tv, ru[c], rv[c])
    return out


def adaptive_warp_forward(image, flow, kernels):
    image, flow, kernels = _check(image, flow, kernels)
    K = kernel_size_of(kernels)
    return _k.warp_forward(image, flow, kernels, K)


def adaptive_warp_backward(image, flow, kernels, grad_out):
    """Returns (grad_image, grad_flow, grad_kernels).

    The integer part of the flow is treated as locally constant, so the
    flow gradient is exact only away from integer-valued flow components.
    """
    image, flow, kernels = _check(image, flow, kernels)
    grad_out = as_tensor(grad_out, "grad_out")
    if grad_out.shape != image.shape:
        raise ShapeError("grad_out must match the image shape")
    K = kernel_size_of(kernels)
    return _k.warp_backward(image, flow, kernels, grad_out, K)


def bilinear_warp(image, flow):
    image, flow, _ = _check(image, flow)
    n, _, H, W = image.shape
    return _k.warp_forward(image, flow, np.ones((n, 4, H, W)), 2)


def local_filter(image, kernels):
    """Per-pixel K x K filtering with no displacement and no bilinear weights."""
    image = as_tensor(image, "image")
    kernels = as_tensor(kernels, "kernels")
    K = kernel_size_of(kernels)
    n, _, H, W = image.shape
    return _k.warp_forward(image, np.zeros((n, 2, H, W)), kernels, K, use_bilinear=False)


def local_filter_backward(image, kernels, grad_out):
    K = kernel_size_of(kernels)
    n, _, H, W = image.shape
    gi, _, gk = _k.warp_backward(image, np.zeros((n, 2, H, W)), kernels, grad_out, K,
                                 use_bilinear=False)
    return gi, gk


def indicator_kernels(shape_nhw, K, taps):
    """Kernel field that is 1 on the given (ru, rv) taps and 0 elsewhere."""
    n, H, W = shape_nhw
    ru, rv = tap_offsets(K)
    out = np.zeros((n, K * K, H, W))
    for c in range(K * K):
        if (int(ru[c]), int(rv[c])) in taps:
            out[:, c] = 1.0
    return out
