"""Vectorised numpy implementations of the per-pixel kernels.

Used when the compiled extension is unavailable (or disabled with
``MEMC_PURE_PYTHON=1``). Accumulation order over taps, channels and hole
directions matches the compiled loops so both paths agree to rounding.
"""

import numpy as np


def tap_offsets(K):
    c = np.arange(K * K)
    half = K // 2 - 1
    return c % K - half, c // K - half


def _floor_and_frac(comp, limit):
    fl = np.floor(comp)
    theta = comp - fl
    fl = np.clip(fl, -limit, limit).astype(np.int64)
    return fl, theta


def _sample_index(flow, K):
    n, _, H, W = flow.shape
    limit = H + W + K
    fu, tu = _floor_and_frac(flow[:, 0], limit)
    fv, tv = _floor_and_frac(flow[:, 1], limit)
    ys = np.arange(H)[None, :, None]
    xs = np.arange(W)[None, None, :]
    return ys + fv, xs + fu, tu, tv


def _gather(image_flat, yy, xx, W, C):
    idx = (yy * W + xx).reshape(yy.shape[0], 1, -1)
    idx = np.broadcast_to(idx, (image_flat.shape[0], C, idx.shape[-1]))
    return np.take_along_axis(image_flat, idx, axis=2)


def bilinear_weights(tu, tv, ru, rv):
    """Quadrant-replicated bilinear weight for a single tap."""
    wu = tu if ru > 0 else 1.0 - tu
    wv = tv if rv > 0 else 1.0 - tv
    return wu * wv


# below this many gathered values all taps are fetched in one call; above
# it the per-tap loop wins because the stacked temporaries stop fitting in cache
_STACKED_LIMIT = 1 << 15


def _warp_forward_stacked(image, flow, kernels, K, use_bilinear):
    n, C, H, W = image.shape
    KK, HW = K * K, H * W
    ru, rv = tap_offsets(K)
    by, bx, tu, tv = _sample_index(flow, K)
    yy = np.clip(by[:, None] + rv[None, :, None, None], 0, H - 1)
    xx = np.clip(bx[:, None] + ru[None, :, None, None], 0, W - 1)
    idx = (yy * W + xx).reshape(n, 1, KK * HW)
    vals = np.take_along_axis(image.reshape(n, C, HW),
                              np.broadcast_to(idx, (n, C, KK * HW)), axis=2)
    w = kernels.reshape(n, KK, HW)
    if use_bilinear:
        tu = tu.reshape(n, 1, HW)
        tv = tv.reshape(n, 1, HW)
        wu = np.where((ru > 0)[None, :, None], tu, 1.0 - tu)
        wv = np.where((rv > 0)[None, :, None], tv, 1.0 - tv)
        w = w * (wu * wv)
    terms = w[:, None] * vals.reshape(n, C, KK, HW)
    out = np.zeros((n, C, HW))
    # sequential tap order, same as the compiled loop
    for c in range(KK):
        out = out + terms[:, :, c]
    return out.reshape(n, C, H, W)


def warp_forward(image, flow, kernels, K, use_bilinear=True):
    n, C, H, W = image.shape
    if n * C * K * K * H * W <= _STACKED_LIMIT:
        return _warp_forward_stacked(image, flow, kernels, K, use_bilinear)
    ru_all, rv_all = tap_offsets(K)
    by, bx, tu, tv = _sample_index(flow, K)
    flat = image.reshape(n, C, H * W)
    out = np.zeros((n, C, H * W))
    for c in range(K * K):
        ru, rv = ru_all[c], rv_all[c]
        yy = np.clip(by + rv, 0, H - 1)
        xx = np.clip(bx + ru, 0, W - 1)
        kl = kernels[:, c].reshape(n, 1, H * W)
        if use_bilinear:
            kd = bilinear_weights(tu, tv, ru, rv).reshape(n, 1, H * W)
            w = kl * kd
        else:
            w = kl
        out = out + w * _gather(flat, yy, xx, W, C)
    return out.reshape(n, C, H, W)


def warp_backward(image, flow, kernels, grad_out, K, use_bilinear=True):
    n, C, H, W = image.shape
    HW = H * W
    ru_all, rv_all = tap_offsets(K)
    by, bx, tu, tv = _sample_index(flow, K)
    tu = tu.reshape(n, HW)
    tv = tv.reshape(n, HW)
    flat = image.reshape(n, C, HW)
    g = grad_out.reshape(n, C, HW)
    kern = kernels.reshape(n, K * K, HW)

    grad_image = np.zeros((n, C, HW))
    grad_flow = np.zeros((n, 2, HW))
    grad_kernels = np.zeros((n, K * K, HW))
    rows = np.arange(n)[:, None, None]
    chans = np.arange(C)[None, :, None]
    for c in range(K * K):
        ru, rv = ru_all[c], rv_all[c]
        yy = np.clip(by + rv, 0, H - 1)
        xx = np.clip(bx + ru, 0, W - 1)
        sampled = _gather(flat, yy, xx, W, C)
        s = np.zeros((n, HW))
        for ch in range(C):
            s = s + g[:, ch] * sampled[:, ch]
        kl = kern[:, c]
        if use_bilinear:
            kd = bilinear_weights(tu, tv, ru, rv)
            grad_kernels[:, c] = kd * s
            du = (1.0 - tv if rv <= 0 else tv) * (1.0 if ru > 0 else -1.0)
            dv = (1.0 - tu if ru <= 0 else tu) * (1.0 if rv > 0 else -1.0)
            grad_flow[:, 0] += kl * s * du
            grad_flow[:, 1] += kl * s * dv
            w = kl * kd
        else:
            grad_kernels[:, c] = s
            w = kl
        idx = (yy * W + xx).reshape(n, 1, HW)
        idx = np.broadcast_to(idx, (n, C, HW))
        np.add.at(grad_image, (np.broadcast_to(rows, idx.shape),
                               np.broadcast_to(chans, idx.shape), idx),
                  w[:, None, :] * g)
    return (grad_image.reshape(n, C, H, W),
            grad_flow.reshape(n, 2, H, W),
            grad_kernels.reshape(n, K * K, H, W))


def round_half_away(a):
    fl = np.floor(a)
    d = a - fl
    up = (d > 0.5) | ((d == 0.5) & (a > 0))
    return (fl + up).astype(np.int64)


def project_scatter(flow):
    """Collision-averaged projection before hole filling.

    Returns (projected, count, targets); ``targets`` holds the flat target
    index of each source pixel or -1 when it lands outside the frame.
    """
    n, _, H, W = flow.shape
    HW = H * W
    ys = np.arange(H, dtype=np.float64)[:, None]
    xs = np.arange(W, dtype=np.float64)[None, :]
    half = flow / 2.0
    projected = np.zeros((n, 2, H, W))
    count = np.zeros((n, H, W), dtype=np.int64)
    targets = np.full((n, H, W), -1, dtype=np.int64)
    for b in range(n):
        # far-out targets are discarded anyway; clipping keeps the int cast safe
        tx = round_half_away(np.clip(xs + half[b, 0], -2.0, W + 1.0))
        ty = round_half_away(np.clip(ys + half[b, 1], -2.0, H + 1.0))
        inside = (tx >= 0) & (tx < W) & (ty >= 0) & (ty < H)
        tgt = np.where(inside, ty * W + tx, -1)
        targets[b] = tgt
        sel = tgt.ravel()
        keep = sel >= 0
        dst = sel[keep]
        cnt = np.bincount(dst, minlength=HW)
        acc_u = np.zeros(HW)
        acc_v = np.zeros(HW)
        np.add.at(acc_u, dst, half[b, 0].ravel()[keep])
        np.add.at(acc_v, dst, half[b, 1].ravel()[keep])
        hit = cnt > 0
        pu = np.zeros(HW)
        pv = np.zeros(HW)
        pu[hit] = -acc_u[hit] / cnt[hit]
        pv[hit] = -acc_v[hit] / cnt[hit]
        projected[b, 0] = pu.reshape(H, W)
        projected[b, 1] = pv.reshape(H, W)
        count[b] = cnt.reshape(H, W)
    return projected, count, targets


def _nearest_along(valid, axis, reverse):
    """Index of the nearest valid pixel strictly before each pixel along axis."""
    size = valid.shape[axis]
    idx = np.arange(size)
    shape = [1, 1]
    shape[axis] = size
    idx = idx.reshape(shape)
    v = valid
    if reverse:
        v = np.flip(v, axis=axis)
    marked = np.where(v, np.broadcast_to(idx, v.shape), -1)
    last = np.maximum.accumulate(marked, axis=axis)
    # shift by one so a pixel never finds itself
    prev = np.full_like(last, -1)
    if axis == 1:
        prev[:, 1:] = last[:, :-1]
    else:
        prev[1:, :] = last[:-1, :]
    if reverse:
        prev = np.flip(prev, axis=axis)
        prev = np.where(prev >= 0, size - 1 - prev, -1)
    return prev


def fill_holes(flow, hole_mask):
    n, _, H, W = flow.shape
    out = flow.copy()
    for b in range(n):
        holes = hole_mask[b].astype(bool)
        if not holes.any():
            continue
        valid = ~holes
        rows = np.arange(H)[:, None]
        cols = np.arange(W)[None, :]
        left = _nearest_along(valid, 1, False)
        right = _nearest_along(valid, 1, True)
        up = _nearest_along(valid, 0, False)
        down = _nearest_along(valid, 0, True)
        found = [
            (left >= 0, rows, np.maximum(left, 0)),
            (right >= 0, rows, np.maximum(right, 0)),
            (up >= 0, np.maximum(up, 0), cols),
            (down >= 0, np.maximum(down, 0), cols),
        ]
        acc_u = np.zeros((H, W))
        acc_v = np.zeros((H, W))
        num = np.zeros((H, W))
        for ok, yi, xi in found:
            yi = np.broadcast_to(yi, (H, W))
            xi = np.broadcast_to(xi, (H, W))
            acc_u = acc_u + np.where(ok, flow[b, 0][yi, xi], 0.0)
            acc_v = acc_v + np.where(ok, flow[b, 1][yi, xi], 0.0)
            num = num + ok
        safe = np.maximum(num, 1.0)
        fu = np.where(num > 0, acc_u / safe, 0.0)
        fv = np.where(num > 0, acc_v / safe, 0.0)
        out[b, 0] = np.where(holes, fu, flow[b, 0])
        out[b, 1] = np.where(holes, fv, flow[b, 1])
    return out


def project_backward(targets, count, grad_out):
    n, _, H, W = grad_out.shape
    grad_in = np.zeros((n, 2, H, W))
    for b in range(n):
        tgt = targets[b]
        inside = tgt >= 0
        t = np.where(inside, tgt, 0)
        cnt = count[b].ravel()[t]
        denom = 2.0 * np.maximum(cnt, 1)
        for ch in range(2):
            g = grad_out[b, ch].ravel()[t]
            grad_in[b, ch] = np.where(inside, -g / denom, 0.0)
    return grad_in
