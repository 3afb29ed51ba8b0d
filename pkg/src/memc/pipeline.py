"""Toy-scale interpolation and enhancement networks around the custom layers.

Interpolation (joint mode): flow is estimated in both directions, projected
onto the middle frame, and each reference frame and its context features
are adaptively warped with kernels predicted from the two input frames.
Occlusion masks blend the warped frames and a small residual network
refines the blend. Sequential mode instead bilinearly warps first and
predicts kernels and masks from the warped frames.

Enhancement: flow and kernels are estimated directly from the centre frame
to every neighbour, the neighbours are warped onto the centre, and a
residual network maps everything to a correction of the centre frame.

All convolutions are 3x3, stride 1, pad 1.
"""

import io
from dataclasses import asdict, dataclass, fields

import numpy as np
from PIL import Image

from . import autodiff as ad
from . import blend as _blend
from .io import quantize
from .tensor import NonFiniteError, ShapeError, as_tensor, hflip, vflip

MODES = ("interpolate-joint", "interpolate-sequential", "enhance-sr", "enhance-dn", "enhance-db")
TRUNK_WIDTH = 32
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
WEIGHT_DECAY = 1e-6


@dataclass
class PipelineConfig:
    mode: str = "interpolate-joint"
    K: int = 4
    context_channels: int = 8
    postproc_channels: int = 16
    residual_blocks: int = 2
    L: int = 3
    hflip: bool = False
    vflip: bool = False
    time_reverse: bool = False
    kernel_softmax: bool = False
    mask_sigmoid: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.K < 2 or self.K % 2:
            raise ValueError(f"K must be even and >= 2, got {self.K}")
        if self.L < 0:
            raise ValueError("L must be >= 0")
        if self.residual_blocks < 1:
            raise ValueError("residual_blocks must be >= 1")
        if self.context_channels < 1 or self.postproc_channels < 1:
            raise ValueError("channel counts must be positive")

    @property
    def is_enhance(self):
        return self.mode.startswith("enhance")

    def to_dict(self):
        return asdict(self)


_META_FIELDS = ("K", "context_channels", "postproc_channels", "residual_blocks", "L",
                "kernel_softmax", "mask_sigmoid", "seed")
META_NAME = "config.meta"


class Pipeline:
    def __init__(self, config=None, store=None):
        self.config = config or PipelineConfig()
        self.store = store if store is not None else ad.ParamStore()
        self._aug_rng = np.random.default_rng(self.config.seed + 1)
        if store is None:
            self._build(np.random.default_rng(self.config.seed))

    # construction

    def _trunk_params(self, name, cin, cout, rng):
        self.store.add_conv(f"{name}.conv0", TRUNK_WIDTH, cin, 3, rng)
        self.store.add_conv(f"{name}.conv1", TRUNK_WIDTH, TRUNK_WIDTH, 3, rng)
        self.store.add_conv(f"{name}.conv2", cout, TRUNK_WIDTH, 3, rng)

    def _build(self, rng):
        cfg = self.config
        KK = cfg.K * cfg.K
        C, P = cfg.context_channels, cfg.postproc_channels
        self._trunk_params("flow", 6, 2, rng)
        if cfg.is_enhance:
            self._trunk_params("kernel", 6, KK, rng)
            self.store.add_conv("context.conv0", C, 3, 3, rng)
            n_nb = 2 * cfg.L
            cin = 3 + n_nb * (3 + 2 + KK + C)
            self.store.add_conv("enhance.head", P, cin, 3, rng)
            for b in range(cfg.residual_blocks):
                self.store.add_conv(f"enhance.block{b}.conv0", P, P, 3, rng)
                self.store.add_conv(f"enhance.block{b}.conv1", P, P, 3, rng)
            self.store.add_conv("enhance.tail", 3, P, 3, rng)
        else:
            self._trunk_params("kernel", 6, 2 * KK, rng)
            self._trunk_params("mask", 6, 2, rng)
            self.store.add_conv("context.conv0", C, 3, 3, rng)
            cin = 3 + 2 + 2 + 2 * KK + 2 + 2 * C
            self.store.add_conv("post.conv0", P, cin, 3, rng)
            self.store.add_conv("post.conv1", P, P, 3, rng)
            self.store.add_conv("post.conv2", P, P, 3, rng)
            self.store.add_conv("post.conv3", 3, P, 3, rng)

    def num_parameters(self):
        return self.store.num_parameters()

    # network pieces

    def _conv(self, name, x):
        return ad.conv2d(x, self.store.node(name + ".weight"), self.store.node(name + ".bias"),
                         stride=1, pad=1)

    def _trunk(self, name, x):
        h = ad.relu(self._conv(f"{name}.conv0", x))
        h = ad.relu(self._conv(f"{name}.conv1", h))
        return self._conv(f"{name}.conv2", h)

    def _context(self, frame):
        return ad.relu(self._conv("context.conv0", frame))

    def _postproc(self, x):
        h = ad.relu(self._conv("post.conv0", x))
        h = ad.relu(self._conv("post.conv1", h))
        h = ad.relu(self._conv("post.conv2", h))
        return self._conv("post.conv3", h)

    def _enhance_net(self, x):
        h = ad.relu(self._conv("enhance.head", x))
        for b in range(self.config.residual_blocks):
            r = ad.relu(self._conv(f"enhance.block{b}.conv0", h))
            r = self._conv(f"enhance.block{b}.conv1", r)
            h = ad.add(h, r)
        return self._conv("enhance.tail", h)

    def _kernels(self, raw):
        return ad.softmax_channels(raw) if self.config.kernel_softmax else raw

    # forward graphs

    def forward_interpolate(self, prev, nxt):
        """Build the interpolation graph; returns a dict of named nodes."""
        if self.config.is_enhance:
            raise ValueError(f"pipeline was built for {self.config.mode}, not interpolation")
        prev = _frame(prev, "frame_prev")
        nxt = _frame(nxt, "frame_next")
        if prev.shape != nxt.shape:
            raise ShapeError(f"frames differ in shape: {prev.shape} vs {nxt.shape}")
        KK = self.config.K * self.config.K
        p, n = ad.constant(prev), ad.constant(nxt)
        pair_pn = ad.concat([p, n])
        pair_np = ad.concat([n, p])

        flow_fwd = _checked(self._trunk("flow", pair_pn), "flow")
        flow_bwd = _checked(self._trunk("flow", pair_np), "flow")
        proj_prev, res_prev = ad.project_flow(flow_fwd)
        proj_next, res_next = ad.project_flow(flow_bwd)

        ctx_prev, ctx_next = self._context(p), self._context(n)

        if self.config.mode == "interpolate-joint":
            kernel_in = pair_pn
        else:
            bw_prev = _checked(ad.bilinear_warp(p, proj_prev), "warp")
            bw_next = _checked(ad.bilinear_warp(n, proj_next), "warp")
            kernel_in = ad.concat([bw_prev, bw_next])

        kern = _checked(self._trunk("kernel", kernel_in), "kernel")
        k_prev = self._kernels(ad.slice_channels(kern, 0, KK))
        k_next = self._kernels(ad.slice_channels(kern, KK, 2 * KK))
        masks = _checked(self._trunk("mask", kernel_in), "mask")
        if self.config.mask_sigmoid:
            masks = ad.sigmoid(masks)
        m_prev = ad.slice_channels(masks, 0, 1)
        m_next = ad.slice_channels(masks, 1, 2)

        if self.config.mode == "interpolate-joint":
            w_prev = ad.adaptive_warp(p, proj_prev, k_prev)
            w_next = ad.adaptive_warp(n, proj_next, k_next)
            wc_prev = ad.adaptive_warp(ctx_prev, proj_prev, k_prev)
            wc_next = ad.adaptive_warp(ctx_next, proj_next, k_next)
        else:
            w_prev = ad.local_filter(bw_prev, k_prev)
            w_next = ad.local_filter(bw_next, k_next)
            wc_prev = ad.local_filter(ad.bilinear_warp(ctx_prev, proj_prev), k_prev)
            wc_next = ad.local_filter(ad.bilinear_warp(ctx_next, proj_next), k_next)
        _checked(w_prev, "warp")
        _checked(w_next, "warp")

        blended = _checked(_blend.blend(w_prev, w_next, m_prev, m_next), "blend")
        post_in = ad.concat([blended, proj_prev, proj_next, k_prev, k_next, m_prev, m_next,
                             wc_prev, wc_next])
        final = _checked(ad.add(blended, self._postproc(post_in)), "postproc")
        return {
            "final": final, "blended": blended,
            "flow_fwd": flow_fwd, "flow_bwd": flow_bwd,
            "proj_prev": proj_prev, "proj_next": proj_next,
            "projection_prev": res_prev, "projection_next": res_next,
            "kernels_prev": k_prev, "kernels_next": k_next,
            "mask_prev": m_prev, "mask_next": m_next,
            "warped_prev": w_prev, "warped_next": w_next,
            "context_prev": wc_prev, "context_next": wc_next,
        }

    def forward_enhance(self, frames):
        if not self.config.is_enhance:
            raise ValueError(f"pipeline was built for {self.config.mode}, not enhancement")
        frames = [_frame(f, f"frame{i}") for i, f in enumerate(frames)]
        if len(frames) % 2 == 0:
            raise ValueError(f"enhancement needs an odd number of frames, got {len(frames)}")
        L = len(frames) // 2
        if L != self.config.L:
            raise ValueError(f"model expects {2 * self.config.L + 1} frames, got {len(frames)}")
        for f in frames[1:]:
            if f.shape != frames[0].shape:
                raise ShapeError(f"frames differ in shape: {f.shape} vs {frames[0].shape}")
        nodes = [ad.constant(f) for f in frames]
        center = nodes[L]
        warped, flows, kerns, ctxs = [], [], [], []
        for k, frame in enumerate(nodes):
            if k == L:
                continue
            pair = ad.concat([center, frame])
            f = _checked(self._trunk("flow", pair), "flow")
            kern = self._kernels(_checked(self._trunk("kernel", pair), "kernel"))
            warped.append(_checked(ad.adaptive_warp(frame, f, kern), "warp"))
            ctxs.append(ad.adaptive_warp(self._context(frame), f, kern))
            flows.append(f)
            kerns.append(kern)
        feats = ad.concat([center] + warped + flows + kerns + ctxs)
        final = _checked(ad.add(center, self._enhance_net(feats)), "enhance")
        return {"final": final, "warped": warped, "flows": flows, "kernels": kerns}

    # persistence

    def to_tensors(self):
        cfg = self.config
        meta = [float(MODES.index(cfg.mode))] + [float(getattr(cfg, f)) for f in _META_FIELDS]
        out = {META_NAME: np.array(meta).reshape(1, 1, 1, -1)}
        out.update(self.store.params)
        return out

    @classmethod
    def from_tensors(cls, tensors):
        if META_NAME not in tensors:
            raise ValueError(f"model is missing the {META_NAME!r} tensor")
        meta = tensors[META_NAME].ravel()
        if meta.size != len(_META_FIELDS) + 1:
            raise ValueError("model metadata has the wrong length")
        kwargs = {"mode": MODES[int(meta[0])]}
        types = {f.name: f.type for f in fields(PipelineConfig)}
        for name, v in zip(_META_FIELDS, meta[1:]):
            kwargs[name] = bool(v) if types[name] in (bool, "bool") else int(v)
        pipe = cls(PipelineConfig(**kwargs))
        for name, current in pipe.store.params.items():
            if name not in tensors:
                raise ValueError(f"model is missing parameter {name!r}")
            value = tensors[name]
            if value.size != current.size:
                raise ValueError(f"parameter {name!r} has {value.size} values, "
                                 f"expected {current.size}")
            pipe.store.params[name] = value.reshape(current.shape).copy()
        extra = set(tensors) - set(pipe.store.params) - {META_NAME}
        if extra:
            raise ValueError(f"model has unknown tensors: {sorted(extra)}")
        return pipe


def _frame(x, name):
    x = as_tensor(x, name)
    if x.shape[1] != 3:
        raise ShapeError(f"{name} must have 3 channels, got {x.shape[1]}", dim="channel")
    return x


def _checked(node, stage):
    if not np.all(np.isfinite(node.value)):
        raise NonFiniteError(f"non-finite values after the {stage} stage", stage=stage)
    return node


def _values(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, ad.Node):
            out[k] = v.value
        elif isinstance(v, list):
            out[k] = [x.value for x in v]
        else:
            out[k] = v
    return out


def interpolate(pipeline, frame_prev, frame_next):
    """Returns (final frame, diagnostics dict of arrays)."""
    graph = pipeline.forward_interpolate(frame_prev, frame_next)
    diag = _values(graph)
    return diag.pop("final"), diag


def enhance(pipeline, frames):
    graph = pipeline.forward_enhance(frames)
    diag = _values(graph)
    return diag.pop("final"), diag


def interpolation_loss(pipeline, triplet):
    prev, gt, nxt = triplet
    g = pipeline.forward_interpolate(prev, nxt)
    loss = _blend.memc_loss(g["final"], g["blended"], as_tensor(gt, "gt"),
                            g["mask_prev"], g["mask_next"])
    return loss, g


def enhancement_loss(pipeline, frames, gt):
    g = pipeline.forward_enhance(frames)
    return ad.charbonnier_sum(ad.sub(g["final"], ad.constant(gt)), _blend.EPS), g


def augment_triplet(triplet, rng, hflip_on, vflip_on, reverse_on):
    prev, gt, nxt = triplet
    if hflip_on and rng.random() < 0.5:
        prev, gt, nxt = hflip(prev), hflip(gt), hflip(nxt)
    if vflip_on and rng.random() < 0.5:
        prev, gt, nxt = vflip(prev), vflip(gt), vflip(nxt)
    if reverse_on and rng.random() < 0.5:
        prev, nxt = nxt, prev
    return prev, gt, nxt


def _apply_update(pipeline, loss, lr):
    value = float(loss.value.item())
    if not np.isfinite(value):
        raise NonFiniteError("training loss is not finite", stage="loss")
    grads = ad.backward(loss, pipeline.store)
    ad.adam_step(pipeline.store, grads, lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, WEIGHT_DECAY)
    return value


def train_step(pipeline, triplet, lr):
    """One Adam step on the interpolation loss; returns the pre-update loss."""
    cfg = pipeline.config
    triplet = augment_triplet(triplet, pipeline._aug_rng, cfg.hflip, cfg.vflip, cfg.time_reverse)
    loss, _ = interpolation_loss(pipeline, triplet)
    return _apply_update(pipeline, loss, lr)


def enhance_train_step(pipeline, frames, gt, lr):
    loss, _ = enhancement_loss(pipeline, frames, gt)
    return _apply_update(pipeline, loss, lr)


# synthetic data

def _shift_xy(shift):
    if np.isscalar(shift):
        return int(shift), 0
    sx, sy = shift
    return int(sx), int(sy)


def make_pattern(pattern, size, seed):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if pattern == "checker":
        cell = max(1, size // 4)
        cells = size // cell
        tints = rng.uniform(0.1, 0.9, size=(cells, cells, 3))
        cy = (yy // cell).astype(int) % cells
        cx = (xx // cell).astype(int) % cells
        dark = ((cy + cx) % 2 == 0)[..., None]
        img = np.where(dark, 0.35 * tints[cy, cx], 0.4 + 0.6 * tints[cy, cx])
    elif pattern == "gradient-blob":
        img = np.full((size, size, 3), 0.5)
        for ch in range(3):
            phase = rng.uniform(0, 2 * np.pi, size=2)
            img[..., ch] += 0.2 * np.sin(2 * np.pi * xx / size + phase[0]) \
                * np.cos(2 * np.pi * yy / size + phase[1])
        for _ in range(3):
            cy, cx = rng.uniform(0, size, size=2)
            sigma = size / 6.0
            dy = np.minimum(np.abs(yy - cy), size - np.abs(yy - cy))
            dx = np.minimum(np.abs(xx - cx), size - np.abs(xx - cx))
            blob = np.exp(-(dx * dx + dy * dy) / (2 * sigma * sigma))
            img += blob[..., None] * rng.uniform(-0.3, 0.3, size=3)
        img = np.clip(img, 0.0, 1.0)
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return np.ascontiguousarray(img.transpose(2, 0, 1)[None])


def translate(image, sx, sy):
    """Periodic translation: content moves right by sx and down by sy."""
    return np.roll(np.roll(image, sx, axis=3), sy, axis=2)


def make_synthetic_triplet(pattern="checker", shift=2, size=16, seed=0):
    """(prev, gt, next): the pattern translated by 0, shift and 2*shift with wrap."""
    sx, sy = _shift_xy(shift)
    if max(abs(sx), abs(sy)) > size / 4:
        raise ValueError(f"|shift| must be <= size/4, got {shift} for size {size}")
    base = make_pattern(pattern, size, seed)
    return base, translate(base, sx, sy), translate(base, 2 * sx, 2 * sy)


def make_synthetic_sequence(pattern="gradient-blob", shift=1, size=16, L=3, seed=0):
    """2L+1 clean frames, frame k translated by (k - L) * shift."""
    sx, sy = _shift_xy(shift)
    base = make_pattern(pattern, size, seed)
    return [translate(base, (k - L) * sx, (k - L) * sy) for k in range(2 * L + 1)]


def degrade(frames, task, seed=0, sigma=20.0 / 255.0, jpeg_quality=10):
    """Corrupt clean frames for an enhancement task ("sr", "dn" or "db")."""
    rng = np.random.default_rng(seed)
    out = []
    for f in frames:
        if task == "dn":
            out.append(f + rng.normal(0.0, sigma, size=f.shape))
        elif task == "sr":
            out.append(bicubic_resize(bicubic_resize(f, 0.5), 2.0, like=f))
        elif task == "db":
            out.append(jpeg_roundtrip(f, jpeg_quality))
        else:
            raise ValueError(f"unknown enhancement task {task!r}")
    return out


def bicubic_resize(image, factor, like=None):
    n, c, h, w = image.shape
    if like is not None:
        th, tw = like.shape[2:]
    else:
        th, tw = max(1, int(round(h * factor))), max(1, int(round(w * factor)))
    out = np.empty((n, c, th, tw))
    for b in range(n):
        for ch in range(c):
            im = Image.fromarray(image[b, ch].astype(np.float32), mode="F")
            out[b, ch] = np.asarray(im.resize((tw, th), Image.BICUBIC), dtype=np.float64)
    return out


def jpeg_roundtrip(image, quality):
    buf = io.BytesIO()
    Image.fromarray(quantize(image[0]).transpose(1, 2, 0), mode="RGB").save(
        buf, "JPEG", quality=quality)
    buf.seek(0)
    with Image.open(buf) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1)[None])
