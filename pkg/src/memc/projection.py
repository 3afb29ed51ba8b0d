"""Flow projection onto the intermediate frame.

Each source pixel ``y`` of the flow between the two reference frames is
pushed halfway along its vector to ``round(y + f(y)/2)`` and contributes
``-f(y)/2`` there. Colliding contributions are averaged; targets outside
the frame are dropped. Pixels nobody lands on are filled with the mean of
the nearest non-hole pixel found scanning left, right, up and down.

Rounding is half-away-from-zero. Filled pixels pass no gradient back.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels as _k
from .tensor import NonFiniteError, ShapeError, as_tensor


@dataclass(frozen=True)
class ProjectionResult:
    flow: np.ndarray        # (n, 2, H, W), holes filled
    count: np.ndarray       # (n, H, W) int, contributors per pixel before filling
    hole_mask: np.ndarray   # (n, H, W) bool, count == 0
    targets: np.ndarray     # (n, H, W) int, flat target of each source or -1


def _check_flow(flow):
    flow = as_tensor(flow, "flow")
    if flow.shape[1] != 2:
        raise ShapeError(f"flow must have 2 channels, got {flow.shape[1]}", dim="channel")
    if not np.all(np.isfinite(flow)):
        raise NonFiniteError("flow contains NaN or Inf", stage="projection")
    return flow


def project_flow(flow_in):
    flow_in = _check_flow(flow_in)
    projected, count, targets = _k.project_scatter(flow_in)
    holes = count == 0
    filled = _k.fill_holes(projected, holes) if holes.any() else projected
    return ProjectionResult(filled, count, holes, targets)


def fill_holes_outside_in(flow, hole_mask):
    flow = as_tensor(flow, "flow")
    hole_mask = np.asarray(hole_mask, dtype=bool)
    if hole_mask.shape != (flow.shape[0],) + flow.shape[2:]:
        raise ShapeError(f"hole mask shape {hole_mask.shape} does not match flow {flow.shape}")
    return _k.fill_holes(flow, hole_mask)


def project_flow_backward(result, grad_out):
    grad_out = as_tensor(grad_out, "grad_out")
    if grad_out.shape != result.flow.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match {result.flow.shape}")
    return _k.project_backward(result.targets, result.count, grad_out)
