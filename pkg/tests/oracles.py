"""Slow, obviously-correct reference implementations used only by the tests."""

import math

import numpy as np


def conv2d_loops(x, w, b, stride, pad):
    n, cin, H, W = x.shape
    cout, _, kh, kw = w.shape
    oh = (H + 2 * pad - kh) // stride + 1
    ow = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for bi in range(n):
        for o in range(cout):
            for y in range(oh):
                for x_ in range(ow):
                    acc = b[o]
                    for c in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                yy = y * stride + i - pad
                                xx = x_ * stride + j - pad
                                if 0 <= yy < H and 0 <= xx < W:
                                    acc += x[bi, c, yy, xx] * w[o, c, i, j]
                    out[bi, o, y, x_] = acc
    return out


def adaptive_warp_loops(image, flow, kernels):
    """Direct per-pixel evaluation of the adaptive warp with border clamping."""
    n, C, H, W = image.shape
    K = int(round(math.sqrt(kernels.shape[1])))
    half = K // 2 - 1
    out = np.zeros_like(image)
    for b in range(n):
        for y in range(H):
            for x in range(W):
                u, v = flow[b, 0, y, x], flow[b, 1, y, x]
                fu, fv = math.floor(u), math.floor(v)
                tu, tv = u - fu, v - fv
                for c in range(K * K):
                    ru, rv = c % K - half, c // K - half
                    wu = tu if ru > 0 else 1 - tu
                    wv = tv if rv > 0 else 1 - tv
                    k = kernels[b, c, y, x] * (wu * wv)
                    yy = min(max(y + fv + rv, 0), H - 1)
                    xx = min(max(x + fu + ru, 0), W - 1)
                    for ch in range(C):
                        out[b, ch, y, x] += k * image[b, ch, yy, xx]
    return out


def _round_half_away(a):
    return int(math.floor(a + 0.5)) if a >= 0 else -int(math.floor(-a + 0.5))


def project_flow_loops(flow):
    """Two-pass scatter: sum and count per target, then divide; no hole filling."""
    n, _, H, W = flow.shape
    out = np.zeros_like(flow)
    count = np.zeros((n, H, W), dtype=int)
    for b in range(n):
        su = [[0.0] * W for _ in range(H)]
        sv = [[0.0] * W for _ in range(H)]
        for y in range(H):
            for x in range(W):
                hu = flow[b, 0, y, x] / 2.0
                hv = flow[b, 1, y, x] / 2.0
                tx = _round_half_away(x + hu)
                ty = _round_half_away(y + hv)
                if 0 <= tx < W and 0 <= ty < H:
                    su[ty][tx] += hu
                    sv[ty][tx] += hv
                    count[b, ty, tx] += 1
        for y in range(H):
            for x in range(W):
                if count[b, y, x]:
                    out[b, 0, y, x] = -su[y][x] / count[b, y, x]
                    out[b, 1, y, x] = -sv[y][x] / count[b, y, x]
    return out, count


def central_difference(f, x, step):
    """Numerical gradient of the scalar function f at array x (x is restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        fp = f()
        x[idx] = orig - step
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * step)
    return g
