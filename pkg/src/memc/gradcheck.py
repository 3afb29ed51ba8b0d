"""Finite-difference gradient checks for every differentiable layer.

Each suite returns the largest relative error it observed, measured per
gradient tensor as ``|analytic - numeric|_2 / max(|analytic|_2, |numeric|_2)``.
Inputs are drawn away from the points where a layer is not differentiable:
flows keep their fractional parts away from integers for the warp, and away
from rounding boundaries for the projection.
"""

import numpy as np

from . import autodiff as ad
from . import blend as _blend
from . import pipeline as _pipe
from .projection import project_flow, project_flow_backward
from .warp import adaptive_warp_backward, adaptive_warp_forward

THRESHOLDS = {
    "adaptive_warp": 1e-4,
    "flow_projection": 1e-4,
    "ops": 1e-6,
    "blend_loss": 1e-5,
    "end_to_end": 1e-3,
}


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def numeric_gradient(f, x, step):
    """Central differences of scalar ``f()`` w.r.t. every element of ``x`` (in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def random_flow_away_from_integers(rng, shape, lo=0.2, hi=0.8, span=2):
    whole = rng.integers(-span, span, size=shape)
    return whole + rng.uniform(lo, hi, size=shape)


def random_projection_flow(rng, shape, span=2):
    """Flows whose half-displaced targets stay >= 0.1 from a rounding boundary."""
    whole = rng.integers(-span, span + 1, size=shape)
    frac = rng.uniform(0.1, 0.4, size=shape)
    frac = np.where(rng.random(shape) < 0.5, frac, frac + 0.5)
    return 2.0 * (whole + frac)


def check_adaptive_warp(seed=0, instances=20, size=8, K=4, step=1e-4):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        image = rng.random((1, 3, size, size))
        flow = random_flow_away_from_integers(rng, (1, 2, size, size))
        kernels = rng.normal(size=(1, K * K, size, size))
        weights = rng.normal(size=image.shape)

        def loss():
            return float(np.sum(weights * adaptive_warp_forward(image, flow, kernels)))

        gi, gf, gk = adaptive_warp_backward(image, flow, kernels, weights)
        worst = max(worst,
                    relative_error(gf, numeric_gradient(loss, flow, step)),
                    relative_error(gk, numeric_gradient(loss, kernels, step)),
                    relative_error(gi, numeric_gradient(loss, image, step)))
    return worst


def check_flow_projection(seed=0, instances=20, size=8, step=1e-4):
    """Returns (max relative error, True if hole pixels passed exactly zero gradient)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    holes_clean = True
    for _ in range(instances):
        flow = random_projection_flow(rng, (1, 2, size, size))
        res = project_flow(flow)
        # filled pixels are excluded by design, so weight only real projections
        keep = (~res.hole_mask)[:, None].astype(np.float64)
        weights = rng.normal(size=flow.shape) * keep

        def loss():
            return float(np.sum(weights * project_flow(flow).flow))

        g = project_flow_backward(res, weights)
        worst = max(worst, relative_error(g, numeric_gradient(loss, flow, step)))
        hole_only = rng.normal(size=flow.shape) * (1.0 - keep)
        if np.any(project_flow_backward(res, hole_only) != 0.0):
            holes_clean = False
    return worst, holes_clean


def _check_node_op(build, inputs, rng, step=1e-5):
    """Compare autodiff gradients of sum(w * build(*inputs)) with central differences."""
    out = build(*[ad.constant(x) for x in inputs])
    weights = rng.normal(size=out.value.shape)

    def loss():
        return float(np.sum(weights * build(*[ad.constant(x) for x in inputs]).value))

    leaves = [ad.constant(x) for x in inputs]
    total = ad.sum_all(ad.mul(build(*leaves), ad.constant(weights)))
    grads = ad.grad(total, leaves)
    return max(relative_error(g, numeric_gradient(loss, x, step))
               for g, x in zip(grads, inputs))


def check_ops(seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(1, 2, 4, 4))
    b = rng.normal(size=(1, 2, 4, 4))
    # keep relu and charbonnier inputs away from the (near-)kink at zero
    r = rng.uniform(0.1, 1.0, size=(1, 2, 4, 4)) * rng.choice([-1.0, 1.0], size=(1, 2, 4, 4))
    m = rng.normal(size=(1, 1, 4, 4))
    w = rng.normal(size=(3, 2, 3, 3))
    bias = rng.normal(size=(1, 1, 1, 3))
    cases = [
        (ad.add, [a, b]),
        (ad.sub, [a, b]),
        (ad.mul, [a, b]),
        (lambda x: ad.scale(x, -1.7), [a]),
        (ad.relu, [r]),
        (ad.sigmoid, [a]),
        (ad.softmax_channels, [a]),
        (lambda x, y: ad.concat([x, y]), [a, b]),
        (lambda x: ad.slice_channels(x, 1, 2), [a]),
        (ad.upsample2, [a]),
        (ad.avgpool2, [a]),
        (ad.mul_mask, [a, m]),
        (lambda x, k, bb: ad.conv2d(x, k, _flat_bias(bb), stride=1, pad=1), [a, w, bias]),
        (lambda x, k: ad.conv2d(x, k, None, stride=2, pad=1), [a, w]),
        (lambda x: ad.charbonnier_sum(x, 1e-3), [r]),
    ]
    return max(_check_node_op(fn, xs, rng) for fn, xs in cases)


def _flat_bias(node):
    return ad.Node(node.value.reshape(-1), (node,),
                   lambda g: (g.reshape(node.value.shape),), "reshape")


def check_blend_loss(seed=0):
    rng = np.random.default_rng(seed)
    shape = (1, 3, 4, 4)
    wp, wn = rng.random(shape), rng.random(shape)
    mp, mn = rng.random((1, 1, 4, 4)), rng.random((1, 1, 4, 4))
    final, gt = rng.random(shape), rng.random(shape)

    def build(wp_, wn_, mp_, mn_, final_):
        blended = _blend.blend(wp_, wn_, mp_, mn_)
        return _blend.memc_loss(final_, blended, gt, mp_, mn_)

    inputs = [wp, wn, mp, mn, final]
    leaves = [ad.constant(x) for x in inputs]
    grads = ad.grad(build(*leaves), leaves)

    def loss():
        return float(build(*[ad.constant(x) for x in inputs]).value.item())

    # the alpha-weighted gradients are ~1e-3 against a loss of ~10, so a smaller
    # step is dominated by cancellation
    worst = max(relative_error(g, numeric_gradient(loss, x, 1e-4))
                for g, x in zip(grads, inputs))
    worst = max(worst, _check_node_op(_blend.blend, [wp, wn, mp, mn], rng))
    return worst


E2E_SEED = 3


def check_end_to_end(seed=E2E_SEED, n_params=10, size=8, step=1e-6):
    """Loss gradient for randomly sampled pipeline parameters vs central differences.

    The instance must be hole-free: filled projection pixels deliberately
    carry no gradient, so a hole would make the two disagree by design.
    """
    triplet = _pipe.make_synthetic_triplet("checker", 1, size, seed)
    pipe = _pipe.Pipeline(_pipe.PipelineConfig(seed=seed))
    loss, graph = _pipe.interpolation_loss(pipe, triplet)
    if graph["projection_prev"].hole_mask.any() or graph["projection_next"].hole_mask.any():
        raise RuntimeError("end-to-end gradient check instance has projection holes")
    grads = ad.backward(loss, pipe.store)
    rng = np.random.default_rng(seed)
    names = pipe.store.names()
    worst = 0.0
    samples = []
    for _ in range(n_params):
        name = names[rng.integers(len(names))]
        p = pipe.store.params[name]
        idx = tuple(int(rng.integers(d)) for d in p.shape)
        orig = p[idx]
        p[idx] = orig + step
        fp = float(_pipe.interpolation_loss(pipe, triplet)[0].value.item())
        p[idx] = orig - step
        fm = float(_pipe.interpolation_loss(pipe, triplet)[0].value.item())
        p[idx] = orig
        numeric = (fp - fm) / (2.0 * step)
        analytic = float(grads[name][idx])
        err = relative_error(analytic, numeric)
        samples.append({"param": name, "index": list(idx), "analytic": analytic,
                        "numeric": numeric, "rel_error": err})
        worst = max(worst, err)
    return worst, samples


def run_all(seed=0):
    """Run every suite; returns (report dict, all_passed)."""
    report = {}
    report["adaptive_warp"] = check_adaptive_warp(seed)
    proj, holes_clean = check_flow_projection(seed)
    report["flow_projection"] = proj
    report["ops"] = check_ops(seed)
    report["blend_loss"] = check_blend_loss(seed)
    report["end_to_end"], _ = check_end_to_end()
    passed = holes_clean and all(report[k] < THRESHOLDS[k] for k in THRESHOLDS)
    return {"max_relative_error": report, "thresholds": THRESHOLDS,
            "hole_pixels_zero_gradient": holes_clean, "passed": passed}, passed
