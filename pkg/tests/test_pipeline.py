import numpy as np
import pytest

from memc import autodiff as ad
from memc import pipeline as P
from memc.gradcheck import random_projection_flow
from memc.projection import project_flow
from memc.tensor import NonFiniteError, ShapeError, hflip, vflip
from memc.warp import bilinear_warp


def _pipe(mode="interpolate-joint", **kw):
    return P.Pipeline(P.PipelineConfig(mode=mode, **kw))


@pytest.mark.parametrize("mode", ["interpolate-joint", "interpolate-sequential"])
def test_interpolate_shape_and_determinism(mode):
    prev, _, nxt = P.make_synthetic_triplet("checker", 2, 12, seed=1)
    out1, diag = P.interpolate(_pipe(mode, seed=4), prev, nxt)
    out2, _ = P.interpolate(_pipe(mode, seed=4), prev, nxt)
    assert out1.shape == prev.shape
    assert out1.tobytes() == out2.tobytes()
    assert diag["kernels_prev"].shape == (1, 16, 12, 12)
    assert diag["mask_prev"].shape == (1, 1, 12, 12)


def test_modes_share_parameter_layout():
    joint, seq = _pipe("interpolate-joint"), _pipe("interpolate-sequential")
    assert joint.store.names() == seq.store.names()
    for name in joint.store.names():
        np.testing.assert_array_equal(joint.store[name], seq.store[name])
    prev, _, nxt = P.make_synthetic_triplet("checker", 1, 8)
    a, _ = P.interpolate(joint, prev, nxt)
    b, _ = P.interpolate(seq, prev, nxt)
    assert not np.array_equal(a, b)


def test_every_trunk_gets_gradient():
    pipe = _pipe(seed=2)
    loss, _ = P.interpolation_loss(pipe, P.make_synthetic_triplet("checker", 1, 8, seed=2))
    grads = ad.backward(loss, pipe.store)
    for prefix in ("flow", "kernel", "mask", "context", "post"):
        total = sum(np.abs(g).sum() for k, g in grads.items() if k.startswith(prefix))
        assert total > 0, prefix


def test_softmax_kernels_sum_to_one():
    prev, _, nxt = P.make_synthetic_triplet("checker", 1, 8)
    _, diag = P.interpolate(_pipe(kernel_softmax=True, mask_sigmoid=True), prev, nxt)
    np.testing.assert_allclose(diag["kernels_prev"].sum(axis=1), 1.0, rtol=1e-14)
    assert np.all((diag["mask_prev"] > 0) & (diag["mask_prev"] < 1))


def test_zero_lr_step_is_null():
    pipe = _pipe(seed=3)
    before = {k: v.copy() for k, v in pipe.store.params.items()}
    triplet = P.make_synthetic_triplet("checker", 1, 8, seed=3)
    l1 = P.train_step(pipe, triplet, lr=0.0)
    l2 = P.train_step(pipe, triplet, lr=0.0)
    assert l1 == l2
    for k, v in before.items():
        np.testing.assert_array_equal(pipe.store[k], v)


def test_train_step_reduces_loss_over_a_few_steps():
    pipe = _pipe(seed=0)
    triplet = P.make_synthetic_triplet("checker", 2, 16)
    losses = [P.train_step(pipe, triplet, 1e-3) for _ in range(20)]
    assert losses[-1] < losses[0]


def test_model_round_trip():
    pipe = _pipe("interpolate-sequential", seed=5, K=2, context_channels=3,
                 kernel_softmax=True)
    back = P.Pipeline.from_tensors(pipe.to_tensors())
    assert back.config == pipe.config
    prev, _, nxt = P.make_synthetic_triplet("gradient-blob", 1, 8)
    np.testing.assert_array_equal(P.interpolate(back, prev, nxt)[0],
                                  P.interpolate(pipe, prev, nxt)[0])


def test_model_missing_param_rejected():
    tensors = _pipe().to_tensors()
    del tensors["post.conv3.bias"]
    with pytest.raises(ValueError):
        P.Pipeline.from_tensors(tensors)


@pytest.mark.parametrize("L", [0, 3])
def test_enhance_shapes(L):
    pipe = _pipe("enhance-dn", L=L)
    frames = P.make_synthetic_sequence("gradient-blob", 1, 8, L)
    out, diag = P.enhance(pipe, frames)
    assert out.shape == frames[L].shape
    assert len(diag["warped"]) == 2 * L


def test_enhance_wrong_frame_count():
    pipe = _pipe("enhance-sr", L=1)
    with pytest.raises(ValueError):
        P.enhance(pipe, P.make_synthetic_sequence("gradient-blob", 1, 8, 2))


def test_mode_mismatch():
    with pytest.raises(ValueError):
        P.enhance(_pipe(), [np.zeros((1, 3, 8, 8))])


def test_frame_shape_mismatch():
    with pytest.raises(ShapeError):
        P.interpolate(_pipe(), np.zeros((1, 3, 8, 8)), np.zeros((1, 3, 8, 6)))
    with pytest.raises(ShapeError):
        P.interpolate(_pipe(), np.zeros((1, 1, 8, 8)), np.zeros((1, 1, 8, 8)))


def test_nan_input_is_numeric_error():
    frame = np.zeros((1, 3, 8, 8))
    frame[0, 0, 3, 3] = np.nan
    with pytest.raises(NonFiniteError):
        P.interpolate(_pipe(), frame, np.zeros((1, 3, 8, 8)))


def test_bad_config():
    with pytest.raises(ValueError):
        P.PipelineConfig(K=3)
    with pytest.raises(ValueError):
        P.PipelineConfig(mode="interpolate-fancy")


def test_synthetic_triplet_construction():
    a, b, c = P.make_synthetic_triplet("checker", 0, 16)
    assert np.array_equal(a, b) and np.array_equal(b, c)
    prev, gt, nxt = P.make_synthetic_triplet("checker", (2, 0), 16)
    np.testing.assert_array_equal(gt, np.roll(prev, 2, axis=3))
    np.testing.assert_array_equal(gt, np.roll(nxt, -2, axis=3))
    with pytest.raises(ValueError):
        P.make_synthetic_triplet("checker", 5, 16)


def test_checker_has_structure():
    img = P.make_pattern("checker", 16, 0)
    assert img.shape == (1, 3, 16, 16)
    assert 0.0 <= img.min() and img.max() <= 1.0
    # neighbouring cells alternate dark and light
    assert img[0, :, 0, 0].mean() < img[0, :, 0, 4].mean()


def test_sequence_centre_is_unshifted():
    frames = P.make_synthetic_sequence("gradient-blob", 1, 8, 2, seed=3)
    np.testing.assert_array_equal(frames[2], P.make_pattern("gradient-blob", 8, 3))
    np.testing.assert_array_equal(frames[3], np.roll(frames[2], 1, axis=3))


def test_degrade_tasks():
    clean = P.make_synthetic_sequence("gradient-blob", 1, 16, 1)
    noisy = P.degrade(clean, "dn", seed=0)
    resid = np.concatenate([(n - c).ravel() for n, c in zip(noisy, clean)])
    assert abs(resid.std() - 20 / 255) < 0.1 * 20 / 255
    for task in ("sr", "db"):
        out = P.degrade(clean, task)
        assert out[0].shape == clean[0].shape
        assert not np.allclose(out[0], clean[0])
    with pytest.raises(ValueError):
        P.degrade(clean, "xx")


def _hflip_flow(flow):
    out = hflip(flow)
    out[:, 0] *= -1
    return out


def test_hflip_conjugates_bilinear_warp():
    rng = np.random.default_rng(0)
    image = rng.random((1, 3, 7, 9))
    flow = rng.uniform(-3, 3, size=(1, 2, 7, 9))
    np.testing.assert_allclose(bilinear_warp(hflip(image), _hflip_flow(flow)),
                               hflip(bilinear_warp(image, flow)), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_hflip_conjugates_projection(seed):
    flow = random_projection_flow(np.random.default_rng(seed), (1, 2, 8, 8))
    np.testing.assert_allclose(project_flow(_hflip_flow(flow)).flow,
                               _hflip_flow(project_flow(flow).flow), atol=1e-12)


def test_augmentation_yields_valid_variants():
    triplet = P.make_synthetic_triplet("checker", (2, 1), 16)
    variants = []
    for h in (False, True):
        for v in (False, True):
            t = [hflip(x) if h else x for x in triplet]
            t = [vflip(x) if v else x for x in t]
            variants += [tuple(t), (t[2], t[1], t[0])]
    rng = np.random.default_rng(1)
    seen = set()
    for _ in range(64):
        out = P.augment_triplet(triplet, rng, True, True, True)
        idx = [i for i, var in enumerate(variants)
               if all(np.array_equal(a, b) for a, b in zip(out, var))]
        assert idx
        seen.add(idx[0])
    assert len(seen) == 8
    assert P.augment_triplet(triplet, rng, False, False, False) == triplet
