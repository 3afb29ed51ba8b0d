"""Acceptance criteria, one check per criterion.

Each check returns ``(passed, detail)``. Under pytest every check is a test
and its PASS/FAIL line is echoed in the terminal summary; run the file
directly (``python3 tests/test_acceptance.py``) to print just the lines.
"""

import math
import os
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from memc import gradcheck as gc  # noqa: E402
from memc import io as mio  # noqa: E402
from memc import metrics  # noqa: E402
from memc import pipeline as P  # noqa: E402
from memc.projection import project_flow  # noqa: E402
from memc.warp import adaptive_warp_forward, bilinear_warp, indicator_kernels  # noqa: E402
from oracles import adaptive_warp_loops, project_flow_loops  # noqa: E402

RESULTS = []
STEPS = 500
LR = 1e-3
ABLATION_SEEDS = (0, 1, 2)


def _train_interp(mode, seed=0, **cfg):
    pipe = P.Pipeline(P.PipelineConfig(mode=mode, seed=seed, **cfg))
    triplet = P.make_synthetic_triplet("checker", 2, 16, seed)
    losses = [P.train_step(pipe, triplet, LR) for _ in range(STEPS)]
    out, _ = P.interpolate(pipe, triplet[0], triplet[2])
    return losses, metrics.psnr(out, triplet[1])


def _train_denoise(**cfg):
    L = 3
    pipe = P.Pipeline(P.PipelineConfig(mode="enhance-dn", L=L, seed=0, **cfg))
    clean = P.make_synthetic_sequence("gradient-blob", 1, 16, L, seed=0)
    noisy = P.degrade(clean, "dn", seed=0, sigma=20.0 / 255.0)
    for _ in range(STEPS):
        P.enhance_train_step(pipe, noisy, clean[L], LR)
    out, _ = P.enhance(pipe, noisy)
    before = metrics.psnr(noisy[L], clean[L])
    return before, metrics.psnr(out, clean[L])


def criterion_1():
    t0 = time.perf_counter()
    err = gc.check_adaptive_warp(seed=0, instances=20, size=8, K=4, step=1e-4)
    dt = time.perf_counter() - t0
    return err < 1e-4 and dt < 10.0, f"max rel err {err:.2e} (< 1e-4), {dt:.2f} s (< 10 s)"


def criterion_2():
    err, holes_clean = gc.check_flow_projection(seed=0, instances=20, size=8, step=1e-4)
    return err < 1e-4 and holes_clean, \
        f"max rel err {err:.2e} (< 1e-4), hole pixels zero gradient: {holes_clean}"


def criterion_3():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        image = rng.random((1, 3, 8, 8))
        flow = rng.uniform(-3, 3, size=(1, 2, 8, 8))
        kern = indicator_kernels((1, 8, 8), 4, {(0, 0), (1, 0), (0, 1), (1, 1)})
        diff = np.abs(adaptive_warp_forward(image, flow, kern) - bilinear_warp(image, flow))
        worst = max(worst, float(diff.max()))
    return worst <= 1e-12, f"max abs diff {worst:.2e} (<= 1e-12) over 20 instances"


def criterion_4():
    rng = np.random.default_rng(4)
    warp_worst = 0.0
    proj_exact = True
    for _ in range(20):
        image = rng.random((1, 3, 8, 8))
        flow = rng.uniform(-2, 2, size=(1, 2, 8, 8))
        kern = rng.normal(size=(1, 16, 8, 8))
        diff = adaptive_warp_forward(image, flow, kern) - adaptive_warp_loops(image, flow, kern)
        warp_worst = max(warp_worst, float(np.abs(diff).max()))
        pflow = rng.uniform(-4, 4, size=(1, 2, 8, 8))
        res = project_flow(pflow)
        ref, count = project_flow_loops(pflow)
        keep = ~res.hole_mask[0]
        proj_exact &= bool(np.array_equal(res.count, count)
                           and np.array_equal(res.flow[0][:, keep], ref[0][:, keep]))
    return warp_worst <= 1e-12 and proj_exact, \
        f"warp max abs diff {warp_worst:.2e} (<= 1e-12), projection bit-exact: {proj_exact}"


def criterion_5():
    err, samples = gc.check_end_to_end(n_params=10, size=8)
    return err < 1e-3, f"max rel err {err:.2e} (< 1e-3) over {len(samples)} parameters"


def criterion_6():
    t0 = time.perf_counter()
    losses, psnr = _train_interp("interpolate-joint")
    dt = time.perf_counter() - t0
    ratio = losses[-1] / losses[0]
    ok = ratio < 0.1 and psnr >= 30.0 and dt < 120.0
    return ok, f"loss ratio {ratio:.4f} (< 0.1), PSNR {psnr:.2f} dB (>= 30), {dt:.1f} s (< 120 s)"


def criterion_7():
    joint, seq, seq_ratios = [], [], []
    for seed in ABLATION_SEEDS:
        joint.append(_train_interp("interpolate-joint", seed, kernel_softmax=True)[1])
        losses, psnr = _train_interp("interpolate-sequential", seed, kernel_softmax=True)
        seq.append(psnr)
        seq_ratios.append(losses[-1] / losses[0])
    mj, ms = float(np.mean(joint)), float(np.mean(seq))
    ok = max(seq_ratios) < 0.1 and ms <= mj + 3.0 and mj >= ms - 0.5
    return ok, (f"softmax kernels, seeds {list(ABLATION_SEEDS)}: joint {mj:.2f} dB, "
                f"sequential {ms:.2f} dB, worst sequential loss ratio {max(seq_ratios):.4f}")


def criterion_8():
    before, after = _train_denoise(kernel_softmax=True)
    gain = after - before
    return gain >= 5.0, f"noisy {before:.2f} dB -> {after:.2f} dB, gain {gain:.2f} dB (>= 5)"


def _fuzz_cases(rng, n):
    valid = [mio.encode_flo(rng.normal(size=(1, 2, 2, 2))),
             mio.encode_ppm(rng.random((1, 3, 2, 2))),
             mio.encode_png(rng.random((1, 3, 2, 2))),
             mio.encode_tensors({"t": rng.normal(size=3)})]
    for i in range(n):
        if i % 2 == 0:
            yield rng.integers(0, 256, size=rng.integers(0, 80), dtype=np.uint8).tobytes()
        else:
            data = bytearray(valid[i % len(valid)])
            for _ in range(rng.integers(1, 4)):
                data[rng.integers(len(data))] = rng.integers(256)
            yield bytes(data[:rng.integers(1, len(data) + 1)])


def criterion_9():
    flo = mio.encode_flo(np.array([3.5, -2.0]).reshape(1, 2, 1, 1))
    flo_ok = flo == (np.array([202021.25], "<f4").tobytes() + np.array([1, 1], "<i4").tobytes()
                     + np.array([3.5, -2.0], "<f4").tobytes())
    ppm_ok = mio.encode_ppm(np.ones((1, 3, 1, 1))) == b"P6\n1 1\n255\n\xff\xff\xff"
    crashes = 0
    rng = np.random.default_rng(9)
    for data in _fuzz_cases(rng, 1000):
        for decoder in (mio.decode_flo, mio.decode_image, mio.decode_tensors):
            try:
                decoder(data)
            except mio.FormatError:
                pass
            except Exception:  # noqa: BLE001 - anything else is a crash
                crashes += 1
    ok = flo_ok and ppm_ok and crashes == 0
    return ok, (f".flo layout match: {flo_ok}, PPM layout match: {ppm_ok}, "
                f"fuzz crashes: {crashes} / 3000 parses")


def criterion_10():
    a = np.full((1, 3, 16, 16), 0.5)
    p = metrics.psnr(a, a + 1.0 / 16)
    c1 = 0.01 ** 2
    s = metrics.ssim(np.zeros((1, 3, 16, 16)), np.ones((1, 3, 16, 16)))
    ok = abs(p - 24.0824) < 1e-4 and abs(s - c1 / (1 + c1)) < 1e-4 and abs(s - 9.999e-5) < 1e-4
    return ok, f"PSNR {p:.6f} dB (24.0824), SSIM {s:.6e} (C1/(1+C1) = {c1 / (1 + c1):.6e})"


def info_default_config():
    """Extra, non-gating numbers for the untouched default configuration."""
    lines = []
    j = _train_interp("interpolate-joint", 0)[1]
    s = _train_interp("interpolate-sequential", 0)[1]
    lines.append(f"raw kernels, seed 0: joint {j:.2f} dB, sequential {s:.2f} dB")
    before, after = _train_denoise()
    lines.append(f"raw kernels, denoising gain {after - before:.2f} dB")
    return lines


CRITERIA = [
    (1, "adaptive-warp gradient suite", criterion_1),
    (2, "flow-projection gradient suite", criterion_2),
    (3, "bilinear equivalence", criterion_3),
    (4, "brute-force loop oracles", criterion_4),
    (5, "end-to-end gradient check", criterion_5),
    (6, "joint-mode convergence", criterion_6),
    (7, "sequential ablation", criterion_7),
    (8, "denoising overfit", criterion_8),
    (9, "format conformance and fuzzing", criterion_9),
    (10, "metric unit values", criterion_10),
]


def _line(number, name, passed, detail):
    return f"{'PASS' if passed else 'FAIL'} criterion {number:2d} {name}: {detail}"


@pytest.mark.acceptance
@pytest.mark.parametrize("number,name,check", CRITERIA, ids=[f"c{n}" for n, _, _ in CRITERIA])
def test_criterion(number, name, check):
    passed, detail = check()
    line = _line(number, name, passed, detail)
    RESULTS.append(line)
    print(line)
    assert passed, line


def main():
    failed = 0
    for number, name, check in CRITERIA:
        passed, detail = check()
        failed += not passed
        print(_line(number, name, passed, detail), flush=True)
    if "--info" in sys.argv:
        for line in info_default_config():
            print("INFO " + line)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
