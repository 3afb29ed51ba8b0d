# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pixel loops for the warping and projection layers.

Mirrors ``memc._pykernels``; the gather-style loops may run over output rows
in parallel because every output element is owned by exactly one iteration.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport floor

cnp.import_array()


cdef inline Py_ssize_t _clampi(Py_ssize_t v, Py_ssize_t lo, Py_ssize_t hi) noexcept nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


cdef inline Py_ssize_t _floor_clamped(double comp, Py_ssize_t limit) noexcept nogil:
    cdef double fl = floor(comp)
    if fl < -limit:
        return -limit
    if fl > limit:
        return limit
    return <Py_ssize_t>fl


cdef inline double _kd(double tu, double tv, Py_ssize_t ru, Py_ssize_t rv) noexcept nogil:
    cdef double wu = tu if ru > 0 else 1.0 - tu
    cdef double wv = tv if rv > 0 else 1.0 - tv
    return wu * wv


def warp_forward(double[:, :, :, ::1] image, double[:, :, :, ::1] flow,
                 double[:, :, :, ::1] kernels, int K, bint use_bilinear=True,
                 int threads=1):
    cdef Py_ssize_t n = image.shape[0], C = image.shape[1]
    cdef Py_ssize_t H = image.shape[2], W = image.shape[3]
    cdef Py_ssize_t limit = H + W + K, half = K // 2 - 1
    cdef Py_ssize_t b, y, x, c, ch, ru, rv, fu, fv, yy, xx
    cdef double u, v, tu, tv, w
    out_arr = np.zeros((n, C, H, W))
    cdef double[:, :, :, ::1] out = out_arr
    for b in range(n):
        for y in prange(H, nogil=True, num_threads=threads, schedule='static'):
            for x in range(W):
                u = flow[b, 0, y, x]
                v = flow[b, 1, y, x]
                fu = _floor_clamped(u, limit)
                fv = _floor_clamped(v, limit)
                tu = u - floor(u)
                tv = v - floor(v)
                for c in range(K * K):
                    ru = c % K - half
                    rv = c // K - half
                    if use_bilinear:
                        w = kernels[b, c, y, x] * _kd(tu, tv, ru, rv)
                    else:
                        w = kernels[b, c, y, x]
                    yy = _clampi(y + fv + rv, 0, H - 1)
                    xx = _clampi(x + fu + ru, 0, W - 1)
                    for ch in range(C):
                        out[b, ch, y, x] = out[b, ch, y, x] + w * image[b, ch, yy, xx]
    return out_arr


def warp_backward(double[:, :, :, ::1] image, double[:, :, :, ::1] flow,
                  double[:, :, :, ::1] kernels, double[:, :, :, ::1] grad_out,
                  int K, bint use_bilinear=True):
    cdef Py_ssize_t n = image.shape[0], C = image.shape[1]
    cdef Py_ssize_t H = image.shape[2], W = image.shape[3]
    cdef Py_ssize_t limit = H + W + K, half = K // 2 - 1
    cdef Py_ssize_t b, y, x, c, ch, ru, rv, fu, fv, yy, xx
    cdef double u, v, tu, tv, s, kl, kd, du, dv, w, gu, gv
    gi_arr = np.zeros((n, C, H, W))
    gf_arr = np.zeros((n, 2, H, W))
    gk_arr = np.zeros((n, K * K, H, W))
    cdef double[:, :, :, ::1] gi = gi_arr
    cdef double[:, :, :, ::1] gf = gf_arr
    cdef double[:, :, :, ::1] gk = gk_arr
    with nogil:
        for b in range(n):
            for y in range(H):
                for x in range(W):
                    u = flow[b, 0, y, x]
                    v = flow[b, 1, y, x]
                    fu = _floor_clamped(u, limit)
                    fv = _floor_clamped(v, limit)
                    tu = u - floor(u)
                    tv = v - floor(v)
                    gu = 0.0
                    gv = 0.0
                    for c in range(K * K):
                        ru = c % K - half
                        rv = c // K - half
                        yy = _clampi(y + fv + rv, 0, H - 1)
                        xx = _clampi(x + fu + ru, 0, W - 1)
                        s = 0.0
                        for ch in range(C):
                            s = s + grad_out[b, ch, y, x] * image[b, ch, yy, xx]
                        kl = kernels[b, c, y, x]
                        if use_bilinear:
                            kd = _kd(tu, tv, ru, rv)
                            gk[b, c, y, x] = kd * s
                            if rv <= 0:
                                du = 1.0 - tv
                            else:
                                du = tv
                            if ru <= 0:
                                du = -du
                                dv = 1.0 - tu
                            else:
                                dv = tu
                            if rv <= 0:
                                dv = -dv
                            gu = gu + kl * s * du
                            gv = gv + kl * s * dv
                            w = kl * kd
                        else:
                            gk[b, c, y, x] = s
                            w = kl
                        for ch in range(C):
                            gi[b, ch, yy, xx] += w * grad_out[b, ch, y, x]
                    gf[b, 0, y, x] = gu
                    gf[b, 1, y, x] = gv
    return gi_arr, gf_arr, gk_arr


cdef inline Py_ssize_t _round_half_away(double a) noexcept nogil:
    cdef double fl = floor(a)
    cdef double d = a - fl
    if d > 0.5 or (d == 0.5 and a > 0):
        return <Py_ssize_t>fl + 1
    return <Py_ssize_t>fl


def project_scatter(double[:, :, :, ::1] flow):
    cdef Py_ssize_t n = flow.shape[0], H = flow.shape[2], W = flow.shape[3]
    cdef Py_ssize_t b, y, x, tx, ty, t
    cdef double hu, hv, ax, ay
    proj_arr = np.zeros((n, 2, H, W))
    count_arr = np.zeros((n, H, W), dtype=np.int64)
    targets_arr = np.full((n, H, W), -1, dtype=np.int64)
    acc_arr = np.zeros((2, H * W))
    cdef double[:, :, :, ::1] proj = proj_arr
    cdef long long[:, :, ::1] count = count_arr
    cdef long long[:, :, ::1] targets = targets_arr
    cdef double[:, ::1] acc = acc_arr
    cdef long long cnt
    with nogil:
        for b in range(n):
            acc[:, :] = 0.0
            for y in range(H):
                for x in range(W):
                    hu = flow[b, 0, y, x] / 2.0
                    hv = flow[b, 1, y, x] / 2.0
                    ax = <double>x + hu
                    ay = <double>y + hv
                    # reject far-out targets before the integer cast
                    if ax < -1.0 or ax > W or ay < -1.0 or ay > H:
                        continue
                    tx = _round_half_away(ax)
                    ty = _round_half_away(ay)
                    if tx < 0 or tx >= W or ty < 0 or ty >= H:
                        continue
                    t = ty * W + tx
                    targets[b, y, x] = t
                    count[b, ty, tx] += 1
                    acc[0, t] += hu
                    acc[1, t] += hv
            for y in range(H):
                for x in range(W):
                    cnt = count[b, y, x]
                    if cnt > 0:
                        proj[b, 0, y, x] = -acc[0, y * W + x] / cnt
                        proj[b, 1, y, x] = -acc[1, y * W + x] / cnt
    return proj_arr, count_arr, targets_arr


def fill_holes(double[:, :, :, ::1] flow, cnp.uint8_t[:, :, ::1] hole_mask,
               int threads=1):
    cdef Py_ssize_t n = flow.shape[0], H = flow.shape[2], W = flow.shape[3]
    cdef Py_ssize_t b, y, x, i
    cdef double su, sv
    cdef int num
    out_arr = np.array(flow, copy=True)
    cdef double[:, :, :, ::1] out = out_arr
    for b in range(n):
        for y in prange(H, nogil=True, num_threads=threads, schedule='static'):
            for x in range(W):
                if not hole_mask[b, y, x]:
                    continue
                su = 0.0
                sv = 0.0
                num = 0
                i = x - 1
                while i >= 0 and hole_mask[b, y, i]:
                    i = i - 1
                if i >= 0:
                    su = su + flow[b, 0, y, i]
                    sv = sv + flow[b, 1, y, i]
                    num = num + 1
                i = x + 1
                while i < W and hole_mask[b, y, i]:
                    i = i + 1
                if i < W:
                    su = su + flow[b, 0, y, i]
                    sv = sv + flow[b, 1, y, i]
                    num = num + 1
                i = y - 1
                while i >= 0 and hole_mask[b, i, x]:
                    i = i - 1
                if i >= 0:
                    su = su + flow[b, 0, i, x]
                    sv = sv + flow[b, 1, i, x]
                    num = num + 1
                i = y + 1
                while i < H and hole_mask[b, i, x]:
                    i = i + 1
                if i < H:
                    su = su + flow[b, 0, i, x]
                    sv = sv + flow[b, 1, i, x]
                    num = num + 1
                if num > 0:
                    out[b, 0, y, x] = su / num
                    out[b, 1, y, x] = sv / num
                else:
                    out[b, 0, y, x] = 0.0
                    out[b, 1, y, x] = 0.0
    return out_arr


def project_backward(long long[:, :, ::1] targets, long long[:, :, ::1] count,
                     double[:, :, :, ::1] grad_out):
    cdef Py_ssize_t n = grad_out.shape[0], H = grad_out.shape[2], W = grad_out.shape[3]
    cdef Py_ssize_t b, y, x, t, ty, tx
    cdef double denom
    gi_arr = np.zeros((n, 2, H, W))
    cdef double[:, :, :, ::1] gi = gi_arr
    with nogil:
        for b in range(n):
            for y in range(H):
                for x in range(W):
                    t = targets[b, y, x]
                    if t < 0:
                        continue
                    ty = t // W
                    tx = t % W
                    denom = 2.0 * count[b, ty, tx]
                    gi[b, 0, y, x] = -grad_out[b, 0, ty, tx] / denom
                    gi[b, 1, y, x] = -grad_out[b, 1, ty, tx] / denom
    return gi_arr
