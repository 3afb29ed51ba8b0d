"""Image quality metrics: PSNR, SSIM and interpolation error."""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    ie: float

    def to_json_dict(self):
        # JSON has no infinity literal
        psnr = "inf" if np.isinf(self.psnr) else float(self.psnr)
        return {"psnr": psnr, "ssim": float(self.ssim), "ie": float(self.ie)}


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metric operands differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak=1.0):
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def interpolation_error(a, b):
    """Root-mean-square difference on the 0-255 scale."""
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((255.0 * a - 255.0 * b) ** 2)))


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img, win):
    patches = sliding_window_view(img, win.shape)
    return np.einsum("yxij,ij->yx", patches, win)


def ssim(a, b):
    """Single-scale SSIM with an 11x11 Gaussian window, averaged over channels.

    Inputs are (n, c, h, w) tensors in [0, 1]; only fully-inside windows count.
    """
    a, b = _pair(a, b)
    if a.ndim != 4:
        raise ShapeError("ssim expects rank-4 tensors")
    if a.shape[2] < SSIM_WINDOW or a.shape[3] < SSIM_WINDOW:
        raise ShapeError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, "
                         f"got {a.shape[2]}x{a.shape[3]}", dim="height")
    win = _gaussian_window()
    scores = []
    for n in range(a.shape[0]):
        for c in range(a.shape[1]):
            x, y = a[n, c], b[n, c]
            mx, my = _filter_valid(x, win), _filter_valid(y, win)
            sxx = _filter_valid(x * x, win) - mx * mx
            syy = _filter_valid(y * y, win) - my * my
            sxy = _filter_valid(x * y, win) - mx * my
            num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
            den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
            scores.append(np.mean(num / den))
    return float(np.mean(scores))


def evaluate(a, b):
    return MetricReport(psnr(a, b), ssim(a, b), interpolation_error(a, b))
