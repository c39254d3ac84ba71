"""Static computation graphs with reverse-mode differentiation.

A graph is built once; every op checks shapes at build time and the node
list stays in topological order by construction. `forward` binds named
inputs/parameters and caches intermediate values; `backward` can then be
called any number of times (e.g. with different seed vectors) until the
next `forward`.

Supported ops: affine, conv2d (stride 1, zero padding), relu, tanh,
maxpool2 (2x2/stride 2), softmax_cross_entropy, add, mul, scale, l2norm,
clip. All values are float64.

Concurrency: a graph instance holds a mutable forward cache, so it must
not be shared between threads during a forward/backward pair; distinct
instances are fully independent and input arrays are never mutated.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels as kernels
from .errors import GraphError, NumericError, ShapeError
from .tensor import as_tensor

PARAMS = "params"


class Node:
    """One operation record: kind, input nodes, output shape, op extras."""

    __slots__ = ("idx", "kind", "inputs", "shape", "meta", "name")

    def __init__(self, idx, kind, inputs, shape, meta=None, name=None):
        self.idx = idx
        self.kind = kind
        self.inputs = inputs
        self.shape = tuple(shape)
        self.meta = meta or {}
        self.name = name

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<Node {self.idx} {self.kind}{tag} {self.shape}>"


class Graph:
    def __init__(self):
        self._nodes: list[Node] = []
        self._named: dict[str, Node] = {}
        self._param_names: list[str] = []
        self._output: Node | None = None
        self._values: list | None = None
        self._aux: dict | None = None

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------

    def _register(self, kind, inputs, shape, meta=None, name=None) -> Node:
        for inp in inputs:
            if self._nodes[inp.idx] is not inp:
                raise GraphError("input node belongs to a different graph")
        node = Node(len(self._nodes), kind, list(inputs), shape, meta, name)
        self._nodes.append(node)
        self._values = None  # stale cache
        return node

    def _register_named(self, kind, name, shape):
        if name in self._named:
            raise GraphError(f"name {name!r} already bound")
        node = self._register(kind, [], shape, name=name)
        self._named[name] = node
        return node

    def input(self, name: str, shape) -> Node:
        """Named input bound at forward time."""
        return self._register_named("input", name, shape)

    def param(self, name: str, shape) -> Node:
        """Like input, but included in backward(PARAMS)."""
        node = self._register_named("param", name, shape)
        self._param_names.append(name)
        return node

    def constant(self, value) -> Node:
        value = as_tensor(value)
        node = self._register("const", [], value.shape)
        node.meta["value"] = value
        return node

    def affine(self, x: Node, w: Node, b: Node) -> Node:
        """Flattens x to [N, D] and returns x @ w + b with shape [N, M]."""
        if len(x.shape) < 2:
            raise ShapeError(f"affine at node {len(self._nodes)}: input must "
                             f"have a batch axis, got {x.shape}")
        d = int(np.prod(x.shape[1:]))
        if len(w.shape) != 2 or w.shape[0] != d:
            raise ShapeError(f"affine at node {len(self._nodes)}: weight "
                             f"{w.shape} does not match flattened input ({d})")
        if b.shape != (w.shape[1],):
            raise ShapeError(f"affine at node {len(self._nodes)}: bias "
                             f"{b.shape} does not match output ({w.shape[1]})")
        return self._register("affine", [x, w, b], (x.shape[0], w.shape[1]))

    def conv2d(self, x: Node, w: Node, b: Node, pad: int = 1) -> Node:
        """2-D convolution, stride 1, zero padding `pad` on each side."""
        if len(x.shape) != 4 or len(w.shape) != 4:
            raise ShapeError(f"conv2d at node {len(self._nodes)}: need "
                             f"[N,C,H,W] x and [F,C,kh,kw] w, got {x.shape} "
                             f"and {w.shape}")
        n, c, h, wd = x.shape
        f, cw, kh, kw = w.shape
        if cw != c:
            raise ShapeError(f"conv2d at node {len(self._nodes)}: channel "
                             f"mismatch ({c} vs {cw})")
        if b.shape != (f,):
            raise ShapeError(f"conv2d at node {len(self._nodes)}: bias "
                             f"{b.shape} does not match filters ({f})")
        ho, wo = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d at node {len(self._nodes)}: kernel "
                             f"larger than padded input")
        return self._register("conv2d", [x, w, b], (n, f, ho, wo),
                              meta={"pad": int(pad)})

    def relu(self, x: Node) -> Node:
        return self._register("relu", [x], x.shape)

    def tanh(self, x: Node) -> Node:
        return self._register("tanh", [x], x.shape)

    def maxpool2(self, x: Node) -> Node:
        if len(x.shape) != 4 or x.shape[2] % 2 or x.shape[3] % 2:
            raise ShapeError(f"maxpool2 at node {len(self._nodes)}: need "
                             f"[N,C,H,W] with even H and W, got {x.shape}")
        n, c, h, w = x.shape
        return self._register("maxpool2", [x], (n, c, h // 2, w // 2))

    def softmax_cross_entropy(self, logits: Node, labels: Node) -> Node:
        """Mean cross-entropy between softmax(logits) and one-hot labels."""
        if len(logits.shape) != 2 or logits.shape != labels.shape:
            raise ShapeError(f"softmax_cross_entropy at node "
                             f"{len(self._nodes)}: need matching [N,K] "
                             f"shapes, got {logits.shape} and {labels.shape}")
        return self._register("sce", [logits, labels], ())

    def add(self, a: Node, b: Node) -> Node:
        return self._register("add", [a, b], self._broadcast(a, b, "add"))

    def mul(self, a: Node, b: Node) -> Node:
        return self._register("mul", [a, b], self._broadcast(a, b, "mul"))

    def scale(self, x: Node, s: float) -> Node:
        s = float(s)
        if not math.isfinite(s):
            raise NumericError("scale factor must be finite")
        return self._register("scale", [x], x.shape, meta={"s": s})

    def l2norm(self, x: Node) -> Node:
        return self._register("l2norm", [x], ())

    def clip(self, x: Node, lo: float, hi: float) -> Node:
        lo, hi = float(lo), float(hi)
        if not lo < hi:
            raise ShapeError(f"clip at node {len(self._nodes)}: empty "
                             f"interval [{lo}, {hi}]")
        return self._register("clip", [x], x.shape, meta={"lo": lo, "hi": hi})

    def _broadcast(self, a, b, kind):
        try:
            return np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(f"{kind} at node {len(self._nodes)}: shapes "
                             f"{a.shape} and {b.shape} do not broadcast")

    def set_output(self, node: Node):
        if self._nodes[node.idx] is not node:
            raise GraphError("output node belongs to a different graph")
        self._output = node
        return node

    @property
    def output(self) -> Node:
        if self._output is None:
            raise GraphError("graph output not set")
        return self._output

    @property
    def param_names(self) -> tuple:
        return tuple(self._param_names)

    # ------------------------------------------------------------------
    # execution
    # ------------------------------------------------------------------

    def forward(self, feed: dict) -> np.ndarray:
        """Evaluate every node and return a copy of the output value."""
        out = self.output
        values: list = [None] * len(self._nodes)
        aux: dict = {}
        for node in self._nodes:
            if node.kind in ("input", "param"):
                if node.name not in feed:
                    raise GraphError(f"missing value for {node.kind} "
                                     f"{node.name!r}")
                values[node.idx] = as_tensor(feed[node.name], node.shape)
            elif node.kind == "const":
                values[node.idx] = node.meta["value"]
            else:
                values[node.idx] = self._eval(node, values, aux)
                if not np.all(np.isfinite(values[node.idx])):
                    raise NumericError(f"non-finite values at node "
                                       f"{node.idx} ({node.kind})")
        self._values = values
        self._aux = aux
        return np.array(values[out.idx], copy=True)

    def value_of(self, node: Node) -> np.ndarray:
        """Cached forward value of a node (after forward)."""
        if self._values is None:
            raise GraphError("backward/value_of called before forward")
        return np.array(self._values[node.idx], copy=True)

    def _eval(self, node, values, aux):
        v = [values[i.idx] for i in node.inputs]
        kind = node.kind
        if kind == "affine":
            x = v[0].reshape(v[0].shape[0], -1)
            return x @ v[1] + v[2]
        if kind == "conv2d":
            return kernels.conv2d_forward(v[0], v[1], v[2], node.meta["pad"])
        if kind == "relu":
            return np.maximum(v[0], 0.0)
        if kind == "tanh":
            return np.tanh(v[0])
        if kind == "maxpool2":
            y, idx = kernels.maxpool2_forward(v[0])
            aux[node.idx] = idx
            return y
        if kind == "sce":
            z = v[0] - v[0].max(axis=1, keepdims=True)
            ez = np.exp(z)
            probs = ez / ez.sum(axis=1, keepdims=True)
            aux[node.idx] = probs
            logp = z - np.log(ez.sum(axis=1, keepdims=True))
            return np.float64(-(v[1] * logp).sum() / v[0].shape[0])
        if kind == "add":
            return v[0] + v[1]
        if kind == "mul":
            return v[0] * v[1]
        if kind == "scale":
            return node.meta["s"] * v[0]
        if kind == "l2norm":
            return np.float64(np.sqrt((v[0] * v[0]).sum()))
        if kind == "clip":
            return np.clip(v[0], node.meta["lo"], node.meta["hi"])
        raise GraphError(f"unknown op kind {kind!r}")

    def backward(self, wrt=PARAMS, seed=None):
        """Gradient of the (seeded) output.

        wrt: an input/param name for a single gradient tensor, or PARAMS
        for a dict over all graph parameters. `seed` is the output
        cotangent; it defaults to all ones (1.0 for scalar outputs).
        """
        if self._values is None:
            raise GraphError("backward called before forward")
        out = self.output
        if seed is None:
            seed = np.ones(out.shape, dtype=np.float64)
        else:
            seed = as_tensor(seed, out.shape)
        grads: list = [None] * len(self._nodes)
        grads[out.idx] = seed.astype(np.float64, copy=True)
        for node in reversed(self._nodes):
            g = grads[node.idx]
            if g is None or not node.inputs:
                continue
            for inp, gi in zip(node.inputs, self._vjp(node, g)):
                if gi is None:
                    continue
                if grads[inp.idx] is None:
                    grads[inp.idx] = np.zeros(inp.shape, dtype=np.float64)
                grads[inp.idx] += gi
        if wrt == PARAMS:
            return {name: self._take_grad(grads, self._named[name])
                    for name in self._param_names}
        if wrt not in self._named:
            raise GraphError(f"no input or param named {wrt!r}")
        return self._take_grad(grads, self._named[wrt])

    def _take_grad(self, grads, node):
        g = grads[node.idx]
        if g is None:
            return np.zeros(node.shape, dtype=np.float64)
        return np.array(g, copy=True)

    def _vjp(self, node, g):
        v = [self._values[i.idx] for i in node.inputs]
        kind = node.kind
        if kind == "affine":
            x2 = v[0].reshape(v[0].shape[0], -1)
            return (g @ v[1].T).reshape(v[0].shape), x2.T @ g, g.sum(axis=0)
        if kind == "conv2d":
            return kernels.conv2d_backward(v[0], v[1], g, node.meta["pad"])
        if kind == "relu":
            return (g * (v[0] > 0.0),)
        if kind == "tanh":
            y = np.tanh(v[0])
            return (g * (1.0 - y * y),)
        if kind == "maxpool2":
            idx = self._aux[node.idx]
            return (kernels.maxpool2_backward(np.ascontiguousarray(g), idx),)
        if kind == "sce":
            probs = self._aux[node.idx]
            n = v[0].shape[0]
            dlogits = g * (probs - v[1]) / n
            safe = np.log(np.maximum(probs, 1e-300))
            dlabels = g * (-safe) / n
            return dlogits, dlabels
        if kind == "add":
            return (_unbroadcast(g, node.inputs[0].shape),
                    _unbroadcast(g, node.inputs[1].shape))
        if kind == "mul":
            return (_unbroadcast(g * v[1], node.inputs[0].shape),
                    _unbroadcast(g * v[0], node.inputs[1].shape))
        if kind == "scale":
            return (node.meta["s"] * g,)
        if kind == "l2norm":
            norm = float(np.sqrt((v[0] * v[0]).sum()))
            if norm == 0.0:
                return (np.zeros_like(v[0]),)
            return (g * v[0] / norm,)
        if kind == "clip":
            inside = (v[0] > node.meta["lo"]) & (v[0] < node.meta["hi"])
            return (g * inside,)
        raise GraphError(f"unknown op kind {kind!r}")


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to `shape`."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape))
                 if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def sgd_step(params: dict, grads: dict, lr: float) -> dict:
    """One plain gradient-descent update: p <- p - lr * g, elementwise."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if set(params) != set(grads):
        raise ShapeError("params and grads name sets differ")
    out = {}
    for name, p in params.items():
        gr = grads[name]
        if p.shape != gr.shape:
            raise ShapeError(f"param {name!r}: shape {p.shape} vs gradient "
                             f"{gr.shape}")
        out[name] = p - lr * gr
    return out
