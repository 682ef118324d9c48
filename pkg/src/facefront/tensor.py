"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Graph is an append-only tape. Every operation evaluates eagerly and
records a node holding the operator kind, the input node ids, opaque
attributes and the forward value; topological order is append order.
``backward`` walks the tape once in reverse and returns gradients for
the leaves marked as parameters. The operator vocabulary is closed:
``record`` rejects anything it does not know.

Everything is float64. Forward evaluation is deterministic; graphs share
no mutable state, so distinct graphs may live on distinct threads.
"""

import numpy as np

from . import kernels

LOG_FLOOR = 1e-12
_LOG_FLOOR_VALUE = float(np.log(LOG_FLOOR))


class GraphError(RuntimeError):
    """Tape misuse: foreign tensor, non-scalar loss or repeated backward."""


class UnknownOpError(ValueError):
    def __init__(self, kind):
        self.kind = kind
        super().__init__("unknown operator kind %r" % (kind,))


class ShapeError(ValueError):
    """Operand shapes incompatible for an operator."""

    def __init__(self, kind, *shapes, detail=""):
        self.kind = kind
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = "%s: incompatible shapes %s" % (
            kind,
            " vs ".join(str(s) for s in self.shapes),
        )
        if detail:
            msg += " (%s)" % detail
        super().__init__(msg)


class Node:
    __slots__ = ("kind", "inputs", "attrs", "value", "is_param", "name")

    def __init__(self, kind, inputs, attrs, value, is_param=False, name=None):
        self.kind = kind
        self.inputs = inputs
        self.attrs = attrs
        self.value = value
        self.is_param = is_param
        self.name = name


class Tensor:
    """Handle into one graph node. A tensor belongs to exactly one graph."""

    __slots__ = ("graph", "node_id")

    def __init__(self, graph, node_id):
        self.graph = graph
        self.node_id = node_id

    @property
    def data(self):
        return self.graph._nodes[self.node_id].value

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self):
        """New constant leaf in the same graph carrying a copy of the value."""
        return self.graph.leaf(self.data.copy())

    def __repr__(self):
        node = self.graph._nodes[self.node_id]
        return "Tensor(id=%d, kind=%s, shape=%s)" % (
            self.node_id,
            node.kind,
            self.shape,
        )


class GradMap:
    """Gradients returned by backward, keyed by parameter node id.

    ``get`` answers zeros for any tensor that received no gradient record,
    which is exactly the contract for frozen (non-parameter) leaves.
    """

    def __init__(self, grads):
        self._grads = grads

    def get(self, tensor):
        g = self._grads.get(tensor.node_id)
        if g is None:
            return np.zeros_like(tensor.data)
        return g

    def __contains__(self, tensor):
        return tensor.node_id in self._grads

    def __len__(self):
        return len(self._grads)


def _contig(arr):
    # np.ascontiguousarray would promote 0-d arrays to shape (1,)
    if arr.ndim == 0 or arr.flags["C_CONTIGUOUS"]:
        return arr
    return np.ascontiguousarray(arr)


def _as_f64(data):
    return _contig(np.asarray(data, dtype=np.float64))


def _axes_tuple(axes, ndim, kind):
    if axes is None:
        return None
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    axes = tuple(int(a) % ndim for a in axes)
    if len(set(axes)) != len(axes):
        raise ValueError("%s: repeated reduction axis %r" % (kind, axes))
    return axes


# ---------------------------------------------------------------------------
# forward implementations


def _f_add(vals, attrs):
    a, b = vals
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None
    return a + b


def _f_sub(vals, attrs):
    a, b = vals
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None
    return a - b


def _f_mul(vals, attrs):
    a, b = vals
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError("elementwise-mul", a.shape, b.shape) from None
    return a * b


def _f_smul(vals, attrs):
    return vals[0] * float(attrs["value"])


def _f_matmul(vals, attrs):
    a, b = vals
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return a @ b


def _f_conv2d(vals, attrs):
    x, w = vals
    stride = int(attrs.get("stride", 1))
    pad = int(attrs.get("pad", 1))
    if stride not in (1, 2):
        raise ValueError("conv2d: stride must be 1 or 2, got %d" % stride)
    if pad < 0:
        raise ValueError("conv2d: negative padding")
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    ho = (x.shape[2] + 2 * pad - w.shape[2]) // stride + 1
    wo = (x.shape[3] + 2 * pad - w.shape[3]) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d", x.shape, w.shape, detail="kernel larger than input")
    return kernels.conv2d_forward(x, w, stride, pad)


def _f_upsample(vals, attrs):
    x = vals[0]
    if x.ndim != 4:
        raise ShapeError("nearest-upsample-2x", x.shape)
    return _contig(x.repeat(2, axis=2).repeat(2, axis=3))


def _f_leaky_relu(vals, attrs):
    x = vals[0]
    slope = float(attrs.get("slope", 0.2))
    return np.where(x > 0, x, slope * x)


def _f_relu(vals, attrs):
    return np.maximum(vals[0], 0.0)


def _f_tanh(vals, attrs):
    return np.tanh(vals[0])


def _f_sigmoid(vals, attrs):
    x = vals[0]
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _f_mean(vals, attrs):
    x = vals[0]
    axes = _axes_tuple(attrs.get("axes"), x.ndim, "mean-reduce")
    return np.asarray(np.mean(x, axis=axes))


def _f_sum(vals, attrs):
    x = vals[0]
    axes = _axes_tuple(attrs.get("axes"), x.ndim, "sum-reduce")
    return np.asarray(np.sum(x, axis=axes))


def _f_abs(vals, attrs):
    return np.abs(vals[0])


def _f_square(vals, attrs):
    return vals[0] * vals[0]


def _f_sqrt(vals, attrs):
    x = vals[0]
    if np.any(x < 0):
        raise ValueError("sqrt: negative input")
    return np.sqrt(x)


def _f_concat(vals, attrs):
    if not vals:
        raise ValueError("concat: needs at least one input")
    first = vals[0]
    if first.ndim < 2:
        raise ShapeError("concat", first.shape, detail="rank must be at least 2")
    for v in vals[1:]:
        if v.ndim != first.ndim or v.shape[:1] != first.shape[:1] or v.shape[2:] != first.shape[2:]:
            raise ShapeError("concat", first.shape, v.shape)
    return _contig(np.concatenate(vals, axis=1))


def _f_slice(vals, attrs):
    x = vals[0]
    start, stop = int(attrs["start"]), int(attrs["stop"])
    if x.ndim < 2 or not (0 <= start < stop <= x.shape[1]):
        raise ShapeError(
            "slice", x.shape, detail="channel range [%d, %d)" % (start, stop)
        )
    return _contig(x[:, start:stop])


def _f_hflip(vals, attrs):
    x = vals[0]
    if x.ndim < 1:
        raise ShapeError("horizontal-flip", x.shape)
    return _contig(x[..., ::-1])


def _f_xent(vals, attrs):
    logits = vals[0]
    labels = np.asarray(attrs["labels"], dtype=np.int64)
    if logits.ndim != 2 or labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(
            "softmax-cross-entropy-with-logits", logits.shape, labels.shape
        )
    if logits.shape[0] == 0:
        raise ValueError("softmax-cross-entropy-with-logits: empty batch")
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise ValueError("softmax-cross-entropy-with-logits: label out of range")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    picked = logp[np.arange(logits.shape[0]), labels]
    return -np.maximum(picked, _LOG_FLOOR_VALUE)


def _f_fdiff(vals, attrs):
    x = vals[0]
    direction = attrs["direction"]
    if x.ndim != 4 or x.shape[2] < 2 or x.shape[3] < 2:
        raise ShapeError(
            "spatial-forward-difference", x.shape, detail="needs at least 2x2 pixels"
        )
    h, w = x.shape[2], x.shape[3]
    if direction == "dx":
        out = x[:, :, : h - 1, 1:] - x[:, :, : h - 1, : w - 1]
    elif direction == "dy":
        out = x[:, :, 1:, : w - 1] - x[:, :, : h - 1, : w - 1]
    else:
        raise ValueError("spatial-forward-difference: direction must be dx or dy")
    return _contig(out)


def _f_reshape(vals, attrs):
    x = vals[0]
    shape = tuple(int(s) for s in attrs["shape"])
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError("reshape", x.shape, shape)
    return _contig(x.reshape(shape))


_FORWARD = {
    "add": _f_add,
    "sub": _f_sub,
    "elementwise-mul": _f_mul,
    "scalar-mul": _f_smul,
    "matmul": _f_matmul,
    "conv2d": _f_conv2d,
    "nearest-upsample-2x": _f_upsample,
    "leaky-relu": _f_leaky_relu,
    "relu": _f_relu,
    "tanh": _f_tanh,
    "sigmoid": _f_sigmoid,
    "mean-reduce": _f_mean,
    "sum-reduce": _f_sum,
    "abs": _f_abs,
    "square": _f_square,
    "sqrt": _f_sqrt,
    "concat": _f_concat,
    "slice": _f_slice,
    "horizontal-flip": _f_hflip,
    "softmax-cross-entropy-with-logits": _f_xent,
    "spatial-forward-difference": _f_fdiff,
    "reshape": _f_reshape,
}


# ---------------------------------------------------------------------------
# backward implementations; each returns per-input gradients


def _unbroadcast(g, shape):
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(
        i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1
    )
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return _contig(g.reshape(shape))


def _b_add(vals, out, g, attrs):
    a, b = vals
    return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]


def _b_sub(vals, out, g, attrs):
    a, b = vals
    return [_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)]


def _b_mul(vals, out, g, attrs):
    a, b = vals
    return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


def _b_smul(vals, out, g, attrs):
    return [g * float(attrs["value"])]


def _b_matmul(vals, out, g, attrs):
    a, b = vals
    return [g @ b.T, a.T @ g]


def _b_conv2d(vals, out, g, attrs):
    x, w = vals
    stride = int(attrs.get("stride", 1))
    pad = int(attrs.get("pad", 1))
    gx, gw = kernels.conv2d_backward(x, w, stride, pad, _contig(g))
    return [gx, gw]


def _b_upsample(vals, out, g, attrs):
    n, c, h2, w2 = g.shape
    return [g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))]


def _b_leaky_relu(vals, out, g, attrs):
    slope = float(attrs.get("slope", 0.2))
    x = vals[0]
    return [np.where(x > 0, g, slope * g)]


def _b_relu(vals, out, g, attrs):
    return [np.where(vals[0] > 0, g, 0.0)]


def _b_tanh(vals, out, g, attrs):
    return [g * (1.0 - out * out)]


def _b_sigmoid(vals, out, g, attrs):
    return [g * out * (1.0 - out)]


def _b_mean(vals, out, g, attrs):
    x = vals[0]
    axes = _axes_tuple(attrs.get("axes"), x.ndim, "mean-reduce")
    if axes is None:
        return [np.broadcast_to(g / x.size, x.shape).copy()]
    shp = list(x.shape)
    count = 1
    for a in axes:
        count *= shp[a]
        shp[a] = 1
    return [np.broadcast_to(g.reshape(shp) / count, x.shape).copy()]


def _b_sum(vals, out, g, attrs):
    x = vals[0]
    axes = _axes_tuple(attrs.get("axes"), x.ndim, "sum-reduce")
    if axes is None:
        return [np.broadcast_to(g, x.shape).copy()]
    shp = list(x.shape)
    for a in axes:
        shp[a] = 1
    return [np.broadcast_to(g.reshape(shp), x.shape).copy()]


def _b_abs(vals, out, g, attrs):
    return [g * np.sign(vals[0])]


def _b_square(vals, out, g, attrs):
    return [2.0 * vals[0] * g]


def _b_sqrt(vals, out, g, attrs):
    # subgradient 0 at the origin keeps exact-zero losses finite
    gx = np.zeros_like(out)
    nz = out > 0
    gx[nz] = 0.5 * g[nz] / out[nz]
    return [gx]


def _b_concat(vals, out, g, attrs):
    grads = []
    start = 0
    for v in vals:
        stop = start + v.shape[1]
        grads.append(_contig(g[:, start:stop]))
        start = stop
    return grads


def _b_slice(vals, out, g, attrs):
    x = vals[0]
    gx = np.zeros_like(x)
    gx[:, int(attrs["start"]) : int(attrs["stop"])] = g
    return [gx]


def _b_hflip(vals, out, g, attrs):
    return [_contig(g[..., ::-1])]


def _b_xent(vals, out, g, attrs):
    logits = vals[0]
    labels = np.asarray(attrs["labels"], dtype=np.int64)
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    logp = z - np.log(ez.sum(axis=1, keepdims=True))
    picked = logp[np.arange(n), labels]
    live = picked > _LOG_FLOOR_VALUE  # clamped samples are constants
    gx = p.copy()
    gx[np.arange(n), labels] -= 1.0
    gx *= (g * live).reshape(n, 1)
    return [gx]


def _b_fdiff(vals, out, g, attrs):
    x = vals[0]
    h, w = x.shape[2], x.shape[3]
    gx = np.zeros_like(x)
    if attrs["direction"] == "dx":
        gx[:, :, : h - 1, 1:] += g
        gx[:, :, : h - 1, : w - 1] -= g
    else:
        gx[:, :, 1:, : w - 1] += g
        gx[:, :, : h - 1, : w - 1] -= g
    return [gx]


def _b_reshape(vals, out, g, attrs):
    return [_contig(g.reshape(vals[0].shape))]


_BACKWARD = {
    "add": _b_add,
    "sub": _b_sub,
    "elementwise-mul": _b_mul,
    "scalar-mul": _b_smul,
    "matmul": _b_matmul,
    "conv2d": _b_conv2d,
    "nearest-upsample-2x": _b_upsample,
    "leaky-relu": _b_leaky_relu,
    "relu": _b_relu,
    "tanh": _b_tanh,
    "sigmoid": _b_sigmoid,
    "mean-reduce": _b_mean,
    "sum-reduce": _b_sum,
    "abs": _b_abs,
    "square": _b_square,
    "sqrt": _b_sqrt,
    "concat": _b_concat,
    "slice": _b_slice,
    "horizontal-flip": _b_hflip,
    "softmax-cross-entropy-with-logits": _b_xent,
    "spatial-forward-difference": _b_fdiff,
    "reshape": _b_reshape,
}

OP_KINDS = tuple(sorted(_FORWARD))


class Graph:
    """Append-only tape of nodes; topological order is append order."""

    def __init__(self):
        self._nodes = []
        self._ran_backward = False

    def __len__(self):
        return len(self._nodes)

    def node(self, node_id):
        return self._nodes[node_id]

    def leaf(self, data, param=False, name=None):
        value = _as_f64(data)
        self._nodes.append(Node("leaf", (), {}, value, is_param=param, name=name))
        return Tensor(self, len(self._nodes) - 1)

    def parameter(self, data, name=None):
        return self.leaf(data, param=True, name=name)

    def record(self, op_kind, inputs, attrs=None):
        if op_kind not in _FORWARD:
            raise UnknownOpError(op_kind)
        attrs = dict(attrs) if attrs else {}
        ids = []
        vals = []
        for t in inputs:
            if not isinstance(t, Tensor) or t.graph is not self:
                raise GraphError(
                    "record(%s): input tensor does not belong to this graph" % op_kind
                )
            ids.append(t.node_id)
            vals.append(t.data)
        value = _as_f64(_FORWARD[op_kind](vals, attrs))
        self._nodes.append(Node(op_kind, tuple(ids), attrs, value))
        return Tensor(self, len(self._nodes) - 1)

    def backward(self, loss):
        if not isinstance(loss, Tensor) or loss.graph is not self:
            raise GraphError("backward: loss does not belong to this graph")
        if loss.size != 1:
            raise GraphError(
                "backward: loss must be scalar, got shape %s" % (loss.shape,)
            )
        if self._ran_backward:
            raise GraphError("backward: already run on this graph (reset first)")
        self._ran_backward = True

        adjoint = [None] * len(self._nodes)
        adjoint[loss.node_id] = np.ones_like(self._nodes[loss.node_id].value)
        for i in range(loss.node_id, -1, -1):
            g = adjoint[i]
            if g is None:
                continue
            node = self._nodes[i]
            if node.kind == "leaf":
                continue
            in_vals = [self._nodes[j].value for j in node.inputs]
            grads = _BACKWARD[node.kind](in_vals, node.value, g, node.attrs)
            for j, gj in zip(node.inputs, grads):
                if gj is None:
                    continue
                if adjoint[j] is None:
                    adjoint[j] = gj.copy() if gj.base is not None else gj
                else:
                    adjoint[j] = adjoint[j] + gj

        out = {}
        for i, node in enumerate(self._nodes):
            if node.is_param:
                g = adjoint[i]
                out[i] = np.zeros_like(node.value) if g is None else _as_f64(g)
        return GradMap(out)

    def reset_backward(self):
        self._ran_backward = False


def record(graph, op_kind, inputs, attrs=None):
    return graph.record(op_kind, inputs, attrs)


def backward(graph, loss):
    return graph.backward(loss)
