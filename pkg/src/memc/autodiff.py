"""Dynamic reverse-mode differentiation over rank-4 tensors.

Every op returns a :class:`Node` that remembers its parents and a closure
mapping the upstream gradient to one gradient per parent. ``backward`` walks
the graph once in reverse topological order, summing gradients for nodes
with several consumers. Nodes never store gradients, so the same graph can
be differentiated repeatedly with identical results.
"""

import numpy as np

from . import projection as _proj
from . import tensor as T
from . import warp as _warp


class Node:
    __slots__ = ("value", "parents", "backward_fn", "op", "param")

    def __init__(self, value, parents=(), backward_fn=None, op="const", param=None):
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.param = param

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def constant(x):
    return Node(T.as_tensor(x))


class ParamStore:
    """Named trainable tensors plus Adam moment estimates."""

    def __init__(self):
        self.params = {}
        self.m = {}
        self.v = {}
        self.step = 0

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        return value

    def add_conv(self, prefix, cout, cin, k, rng):
        """He-uniform weights (variance 2/fan_in) and zero biases."""
        fan_in = cin * k * k
        bound = np.sqrt(6.0 / fan_in)
        self.add(prefix + ".weight", rng.uniform(-bound, bound, size=(cout, cin, k, k)))
        self.add(prefix + ".bias", np.zeros(cout))

    def node(self, name):
        return Node(self.params[name], op="param", param=name)

    def names(self):
        return list(self.params)

    def num_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    def __contains__(self, name):
        return name in self.params

    def __getitem__(self, name):
        return self.params[name]

    def __len__(self):
        return len(self.params)


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _propagate(loss):
    if loss.value.size != 1 or loss.value.ndim != 4:
        raise ValueError(f"backward needs a scalar 1x1x1x1 loss, got shape {loss.value.shape}")
    grads = {id(loss): np.ones_like(loss.value)}
    order = _toposort(loss)
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return grads, order


def backward(loss, store=None):
    """Gradient of a scalar loss w.r.t. every parameter.

    Returns ``{name: grad}``. With a store, parameters the loss does not
    reach get zero gradients.
    """
    grads, order = _propagate(loss)
    out = {}
    for node in order:
        if node.param is None or id(node) not in grads:
            continue
        g = grads[id(node)]
        out[node.param] = out[node.param] + g if node.param in out else g
    if store is not None:
        for name, value in store.params.items():
            out.setdefault(name, np.zeros_like(value))
    return out


def grad(loss, wrt):
    """Gradients of a scalar loss w.r.t. arbitrary nodes (zeros if unreached)."""
    grads, _ = _propagate(loss)
    return [grads.get(id(n), np.zeros_like(n.value)) for n in wrt]


# elementwise and structural ops

def add(a, b):
    T.check_same_shape(a.value, b.value, "add")
    return Node(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    T.check_same_shape(a.value, b.value, "sub")
    return Node(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    T.check_same_shape(a.value, b.value, "mul")
    av, bv = a.value, b.value
    return Node(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a, s):
    s = float(s)
    return Node(a.value * s, (a,), lambda g: (g * s,), "scale")


def add_const(a, c):
    return Node(a.value + float(c), (a,), lambda g: (g,), "add_const")


def relu(a):
    mask = a.value > 0
    # np.maximum keeps NaN visible to the finiteness checks downstream
    return Node(np.maximum(a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a):
    s = 1.0 / (1.0 + np.exp(-a.value))
    return Node(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softmax_channels(a):
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)
    return Node(s, (a,), back, "softmax")


def concat(nodes):
    values = [n.value for n in nodes]
    out = T.concat(values)
    bounds = np.cumsum([0] + [v.shape[1] for v in values])

    def back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(nodes)))
    return Node(out, tuple(nodes), back, "concat")


def slice_channels(a, start, stop):
    shape = a.value.shape

    def back(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)
    return Node(np.ascontiguousarray(a.value[:, start:stop]), (a,), back, "slice")


def upsample2(a):
    def back(g):
        n, c, h, w = g.shape
        return (g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)),)
    return Node(T.upsample2(a.value), (a,), back, "upsample2")


def avgpool2(a):
    def back(g):
        return (T.upsample2(g) * 0.25,)
    return Node(T.avgpool2(a.value), (a,), back, "avgpool2")


def mul_mask(a, m):
    """Multiply every channel of ``a`` by the single-channel map ``m``."""
    if m.value.shape[1] != 1 or m.value.shape[2:] != a.value.shape[2:] \
            or m.value.shape[0] != a.value.shape[0]:
        raise T.ShapeError(f"mask shape {m.value.shape} cannot scale {a.value.shape}")
    av, mv = a.value, m.value

    def back(g):
        return g * mv, (g * av).sum(axis=1, keepdims=True)
    return Node(av * mv, (a, m), back, "mul_mask")


def sum_all(a):
    shape = a.value.shape
    return Node(np.full((1, 1, 1, 1), a.value.sum()), (a,),
                lambda g: (np.full(shape, g.item()),), "sum")


def conv2d(x, weight, bias=None, stride=1, pad=0):
    xv, wv = x.value, weight.value
    out = T.conv2d(xv, wv, None if bias is None else bias.value, stride, pad)

    def back(g):
        gx, gw, gb = T.conv2d_backward(xv, wv, g, stride, pad)
        return (gx, gw) if bias is None else (gx, gw, gb)
    parents = (x, weight) if bias is None else (x, weight, bias)
    return Node(out, parents, back, "conv2d")


def charbonnier_sum(x, eps):
    """Sum over all elements of sqrt(x^2 + eps^2)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    xv = x.value
    root = np.sqrt(xv * xv + eps * eps)
    return Node(np.full((1, 1, 1, 1), root.sum()), (x,),
                lambda g: (g.item() * xv / root,), "charbonnier")


# custom layers

def adaptive_warp(image, flow, kernels):
    iv, fv, kv = image.value, flow.value, kernels.value
    out = _warp.adaptive_warp_forward(iv, fv, kv)

    def back(g):
        return _warp.adaptive_warp_backward(iv, fv, kv, g)
    return Node(out, (image, flow, kernels), back, "adaptive_warp")


def bilinear_warp(image, flow):
    iv, fv = image.value, flow.value
    ones = np.ones((iv.shape[0], 4) + iv.shape[2:])
    out = _warp.bilinear_warp(iv, fv)

    def back(g):
        gi, gf, _ = _warp.adaptive_warp_backward(iv, fv, ones, g)
        return gi, gf
    return Node(out, (image, flow), back, "bilinear_warp")


def local_filter(image, kernels):
    iv, kv = image.value, kernels.value
    out = _warp.local_filter(iv, kv)

    def back(g):
        return _warp.local_filter_backward(iv, kv, g)
    return Node(out, (image, kernels), back, "local_filter")


def project_flow(flow):
    """Projection node plus the ProjectionResult (counts, holes) it saved."""
    result = _proj.project_flow(flow.value)

    def back(g):
        return (_proj.project_flow_backward(result, g),)
    return Node(result.flow, (flow,), back, "project_flow"), result


def adam_step(store, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """One Adam update with bias correction and decoupled weight decay.

    Parameters missing from ``grads`` are updated with a zero gradient.
    The store is modified in place and returned.
    """
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if weight_decay:
            p -= lr * weight_decay * p
        m = store.m[name] = beta1 * store.m[name] + (1.0 - beta1) * g
        v = store.v[name] = beta2 * store.v[name] + (1.0 - beta2) * g * g
        # a beta of exactly 1 never decays, so skip the correction instead of dividing by 0
        m_hat = m / c1 if c1 else m
        v_hat = v / c2 if c2 else v
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return store
