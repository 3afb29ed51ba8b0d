"""Command-line front end.

Exit codes: 0 success, 1 failed gradient check, 2 bad input (I/O, parse,
schema), 3 shape mismatch, 4 numeric failure (non-finite values, divergence).
"""

import argparse
import json
import logging
import sys

import jsonschema
import numpy as np

from . import gradcheck as _gc
from . import io as mio
from . import kernels as _kernels
from . import metrics as _metrics
from . import pipeline as _pipe
from .projection import project_flow
from .tensor import NonFiniteError, ShapeError
from .warp import adaptive_warp_forward, bilinear_warp

log = logging.getLogger("memc")

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_SHAPE, EXIT_NUMERIC = 0, 1, 2, 3, 4

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": list(_pipe.MODES)},
        "K": {"type": "integer", "minimum": 2, "multipleOf": 2},
        "context_channels": {"type": "integer", "minimum": 1},
        "postproc_channels": {"type": "integer", "minimum": 1},
        "residual_blocks": {"type": "integer", "minimum": 1},
        "L": {"type": "integer", "minimum": 0},
        "augmentation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hflip": {"type": "boolean"},
                "vflip": {"type": "boolean"},
                "time_reverse": {"type": "boolean"},
            },
        },
        "kernel_softmax": {"type": "boolean"},
        "mask_sigmoid": {"type": "boolean"},
        "seed": {"type": "integer", "minimum": 0},
        "steps": {"type": "integer", "minimum": 1},
        "lr": {"type": "number", "minimum": 0},
        "pattern": {"enum": ["checker", "gradient-blob"]},
        "shift": {
            "oneOf": [
                {"type": "integer"},
                {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
            ]
        },
        "size": {"type": "integer", "minimum": 4},
    },
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _load(fn, path, what):
    try:
        return fn(path)
    except (OSError, mio.FormatError) as exc:
        raise CliError(f"cannot read {what} {path!r}: {exc}", EXIT_INPUT) from exc


def _save(fn, path, value, what):
    try:
        fn(path, value)
    except (OSError, mio.FormatError) as exc:
        raise CliError(f"cannot write {what} {path!r}: {exc}", EXIT_INPUT) from exc


def _load_model(path):
    tensors = _load(mio.load_tensors, path, "model")
    try:
        return _pipe.Pipeline.from_tensors(tensors)
    except (ValueError, IndexError) as exc:
        raise CliError(f"invalid model {path!r}: {exc}", EXIT_INPUT) from exc


def _single_tensor(tensors, preferred, path):
    if preferred in tensors:
        return tensors[preferred]
    if len(tensors) == 1:
        return next(iter(tensors.values()))
    raise CliError(f"{path!r} holds several tensors and none is named {preferred!r}",
                   EXIT_INPUT)


# commands

def cmd_warp(args):
    image = _load(mio.read_image, args.image, "image")
    flow = _load(mio.read_flo, args.flow, "flow")
    if args.kernels:
        kern = _single_tensor(_load(mio.load_tensors, args.kernels, "kernels"), "kernels",
                              args.kernels)
        out = adaptive_warp_forward(image, flow, kern)
    else:
        out = bilinear_warp(image, flow)
    _save(mio.write_image, args.out, out, "image")
    return EXIT_OK


def cmd_project_flow(args):
    flow = _load(mio.read_flo, args.flow, "flow")
    res = project_flow(flow)
    _save(mio.write_flo, args.out, res.flow, "flow")
    if args.dump_holes:
        _save(mio.atomic_write, args.dump_holes, mio.encode_mask_png(res.hole_mask[0]),
              "hole mask")
    log.info("projected %d holes", int(res.hole_mask.sum()))
    return EXIT_OK


def cmd_interpolate(args):
    pipe = _load_model(args.model)
    if pipe.config.is_enhance:
        raise CliError(f"model {args.model!r} is an enhancement model", EXIT_INPUT)
    if args.mode:
        pipe.config.mode = "interpolate-" + args.mode
    prev = _load(mio.read_image, args.prev, "image")
    nxt = _load(mio.read_image, args.next, "image")
    final, _ = _pipe.interpolate(pipe, prev, nxt)
    _save(mio.write_image, args.out, final, "image")
    return EXIT_OK


def _read_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path!r}: {exc}", EXIT_INPUT) from exc
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise CliError(f"invalid config {path!r}: {exc.message}", EXIT_INPUT) from exc
    return doc


def config_from_document(doc):
    """Split a validated config document into (PipelineConfig, training options)."""
    aug = doc.get("augmentation", {})
    cfg_fields = ("mode", "K", "context_channels", "postproc_channels", "residual_blocks",
                  "L", "kernel_softmax", "mask_sigmoid", "seed")
    cfg = _pipe.PipelineConfig(
        hflip=aug.get("hflip", False), vflip=aug.get("vflip", False),
        time_reverse=aug.get("time_reverse", False),
        **{k: doc[k] for k in cfg_fields if k in doc})
    train = {
        "steps": doc.get("steps", 500),
        "lr": doc.get("lr", 1e-3),
        "pattern": doc.get("pattern", "checker" if not cfg.is_enhance else "gradient-blob"),
        "shift": doc.get("shift", 2 if not cfg.is_enhance else 1),
        "size": doc.get("size", 16),
    }
    return cfg, train


def train_toy(cfg, train):
    """Train a pipeline on synthetic data; returns (pipeline, report dict)."""
    pipe = _pipe.Pipeline(cfg)
    shift = train["shift"]
    shift = tuple(shift) if isinstance(shift, list) else shift
    losses = []
    if cfg.is_enhance:
        task = cfg.mode.split("-")[1]
        clean = _pipe.make_synthetic_sequence(train["pattern"], shift, train["size"], cfg.L,
                                              cfg.seed)
        frames = _pipe.degrade(clean, task, cfg.seed)
        gt = clean[cfg.L]
        for _ in range(train["steps"]):
            losses.append(_pipe.enhance_train_step(pipe, frames, gt, train["lr"]))
        out, _ = _pipe.enhance(pipe, frames)
        report = {"input_psnr": _metrics.psnr(frames[cfg.L], gt)}
    else:
        triplet = _pipe.make_synthetic_triplet(train["pattern"], shift, train["size"], cfg.seed)
        for _ in range(train["steps"]):
            losses.append(_pipe.train_step(pipe, triplet, train["lr"]))
        out, _ = _pipe.interpolate(pipe, triplet[0], triplet[2])
        gt = triplet[1]
        report = {}
    report.update({
        "config": cfg.to_dict(),
        "training": train,
        "parameters": pipe.num_parameters(),
        "losses": losses,
        "initial_loss": losses[0],
        "final_loss": losses[-1],
        "loss_ratio": losses[-1] / losses[0],
        "psnr": _metrics.psnr(out, gt),
    })
    return pipe, report


def cmd_train_toy(args):
    doc = _read_config(args.config)
    try:
        cfg, train = config_from_document(doc)
    except ValueError as exc:
        raise CliError(f"invalid config {args.config!r}: {exc}", EXIT_INPUT) from exc
    pipe, report = train_toy(cfg, train)
    log.info("trained %d steps: loss %.4g -> %.4g, psnr %.2f dB", train["steps"],
             report["initial_loss"], report["final_loss"], report["psnr"])
    _save(mio.save_tensors, args.out_model, pipe.to_tensors(), "model")
    if args.report:
        text = json.dumps(_json_safe(report), indent=2, sort_keys=True) + "\n"
        _save(mio.atomic_write, args.report, text.encode("utf-8"), "report")
    return EXIT_OK


def cmd_enhance(args):
    pipe = _load_model(args.model)
    if pipe.config.mode != "enhance-" + args.task:
        raise CliError(f"model was trained for {pipe.config.mode}, not enhance-{args.task}",
                       EXIT_INPUT)
    frames = [_load(mio.read_image, f, "image") for f in args.frames]
    if len(frames) % 2 == 0:
        raise CliError(f"enhance needs an odd number of frames, got {len(frames)}", EXIT_INPUT)
    if args.task == "sr":
        frames = [_pipe.bicubic_resize(f, args.scale) for f in frames]
    try:
        out, _ = _pipe.enhance(pipe, frames)
    except ValueError as exc:
        if isinstance(exc, (ShapeError, NonFiniteError)):
            raise
        raise CliError(str(exc), EXIT_INPUT) from exc
    _save(mio.write_image, args.out, out, "image")
    return EXIT_OK


def cmd_gradcheck(args):
    report, passed = _gc.run_all(args.seed)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK if passed else EXIT_CHECK


def cmd_metrics(args):
    a = _load(mio.read_image, args.a, "image")
    b = _load(mio.read_image, args.b, "image")
    report = _metrics.evaluate(a, b)
    print(json.dumps(report.to_json_dict(), separators=(",", ":")))
    return EXIT_OK


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return "inf" if np.isinf(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def build_parser():
    parser = argparse.ArgumentParser(prog="memc", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=1,
                        help="threads for the row-parallel kernels (results are identical)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("warp", help="warp an image by a flow field")
    p.add_argument("--image", required=True)
    p.add_argument("--flow", required=True)
    p.add_argument("--kernels", help="tensor bundle with a K*K-channel kernel field")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("project-flow", help="project a flow onto the intermediate frame")
    p.add_argument("--flow", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-holes", help="PNG with holes (before filling) in white")
    p.set_defaults(func=cmd_project_flow)

    p = sub.add_parser("interpolate", help="synthesise the middle frame")
    p.add_argument("--prev", required=True)
    p.add_argument("--next", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=["joint", "sequential"])
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("train-toy", help="train on a synthetic sequence")
    p.add_argument("--config", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("enhance", help="enhance the centre of 2L+1 frames")
    p.add_argument("--task", required=True, choices=["sr", "dn", "db"])
    p.add_argument("--frames", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--scale", type=float, default=2.0, help="upsampling factor for sr")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suites")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("metrics", help="PSNR, SSIM and interpolation error of two images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        _kernels.set_threads(args.threads)
        # non-finite values are caught by explicit checks and reported as exit 4
        with np.errstate(invalid="ignore", over="ignore"):
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ShapeError as exc:
        print(f"error: shape mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except NonFiniteError as exc:
        stage = f" (stage: {exc.stage})" if exc.stage else ""
        print(f"error: numeric failure{stage}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
