"""Rank-4 float64 tensors and the dense primitives the layers build on.

Tensors are plain ``numpy.ndarray`` objects of shape (n, c, h, w) and dtype
float64. Every function here returns a fresh array and leaves its inputs
untouched.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes are incompatible; ``dim`` names the offending axis."""

    def __init__(self, message, dim=None):
        super().__init__(message)
        self.dim = dim


class NonFiniteError(ValueError):
    """A NaN or Inf reached a layer boundary; ``stage`` names where."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


_DIM_NAMES = ("batch", "channel", "height", "width")


def as_tensor(x, name="tensor"):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (n, c, h, w), got shape {a.shape}")
    return np.ascontiguousarray(a)


def zeros(n, c, h, w):
    return np.zeros((n, c, h, w))


def offset(shape, n, c, y, x):
    """Row-major flat offset of element (n, c, y, x); raises on out-of-range."""
    N, C, H, W = shape
    for v, size, label in zip((n, c, y, x), shape, _DIM_NAMES):
        if not 0 <= v < size:
            raise IndexError(f"{label} index {v} out of range [0, {size})")
    return ((n * C + c) * H + y) * W + x


def check_same_shape(a, b, what="operands"):
    if a.shape != b.shape:
        for i, (p, q) in enumerate(zip(a.shape, b.shape)):
            if p != q:
                raise ShapeError(
                    f"{what}: {_DIM_NAMES[i]} mismatch ({p} vs {q})", dim=_DIM_NAMES[i])
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def _conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _im2col(x, kh, kw, stride, pad):
    """(n, cin*kh*kw, oh*ow) patch matrix, rows ordered (c, i, j)."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    return cols, oh, ow


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """Cross-correlation with zero padding, (N,Cin,H,W) * (Cout,Cin,Kh,Kw)."""
    if weight.ndim != 4:
        raise ShapeError(f"weight must be rank 4, got {weight.shape}")
    cout, cin, kh, kw = weight.shape
    if x.shape[1] != cin:
        raise ShapeError(f"conv2d: input channel mismatch ({x.shape[1]} vs weight {cin})",
                         dim="channel")
    if bias is not None and np.shape(bias) != (cout,):
        raise ShapeError(f"conv2d: bias length {np.shape(bias)} does not match {cout} outputs",
                         dim="channel")
    oh = _conv_out_size(x.shape[2], kh, stride, pad)
    ow = _conv_out_size(x.shape[3], kw, stride, pad)
    if oh < 1 or ow < 1:
        raise ShapeError("conv2d: kernel larger than padded input", dim="height")
    cols, oh, ow = _im2col(x, kh, kw, stride, pad)
    out = np.matmul(weight.reshape(cout, -1), cols).reshape(x.shape[0], cout, oh, ow)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(x, weight, grad_out, stride=1, pad=0):
    """Gradients of conv2d w.r.t. input, weight and bias."""
    cout, cin, kh, kw = weight.shape
    n, _, H, W = x.shape
    cols, oh, ow = _im2col(x, kh, kw, stride, pad)
    g = grad_out.reshape(n, cout, oh * ow)
    grad_w = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    gcols = np.matmul(weight.reshape(cout, -1).T, g).reshape(n, cin, kh, kw, oh, ow)
    gxp = np.zeros((n, cin, H + 2 * pad, W + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[:, :, i, j]
    grad_x = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def add(a, b):
    check_same_shape(a, b, "add")
    return a + b


def sub(a, b):
    check_same_shape(a, b, "sub")
    return a - b


def mul(a, b):
    check_same_shape(a, b, "mul")
    return a * b


def scale(a, s):
    return a * float(s)


def relu(a):
    return np.maximum(a, 0.0)


def concat(tensors):
    """Concatenate on the channel axis, preserving operand order."""
    first = tensors[0]
    for t in tensors[1:]:
        for axis in (0, 2, 3):
            if t.shape[axis] != first.shape[axis]:
                raise ShapeError(
                    f"concat: {_DIM_NAMES[axis]} mismatch ({t.shape[axis]} vs {first.shape[axis]})",
                    dim=_DIM_NAMES[axis])
    return np.concatenate(tensors, axis=1)


def upsample2(a):
    """Nearest-neighbour upsampling by two in both spatial axes."""
    return a.repeat(2, axis=2).repeat(2, axis=3)


def avgpool2(a):
    n, c, h, w = a.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2 needs even spatial size, got {h}x{w}", dim="height")
    return a.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def hflip(a):
    return np.ascontiguousarray(a[..., ::-1])


def vflip(a):
    return np.ascontiguousarray(a[..., ::-1, :])
