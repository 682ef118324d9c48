"""Thin functional wrappers over Graph.record for readable network code."""


def add(a, b):
    return a.graph.record("add", (a, b))


def sub(a, b):
    return a.graph.record("sub", (a, b))


def mul(a, b):
    return a.graph.record("elementwise-mul", (a, b))


def smul(a, value):
    return a.graph.record("scalar-mul", (a,), {"value": float(value)})


def matmul(a, b):
    return a.graph.record("matmul", (a, b))


def conv2d(x, w, stride=1, pad=1):
    return x.graph.record("conv2d", (x, w), {"stride": stride, "pad": pad})


def upsample2x(x):
    return x.graph.record("nearest-upsample-2x", (x,))


def leaky_relu(x, slope=0.2):
    return x.graph.record("leaky-relu", (x,), {"slope": slope})


def relu(x):
    return x.graph.record("relu", (x,))


def tanh(x):
    return x.graph.record("tanh", (x,))


def sigmoid(x):
    return x.graph.record("sigmoid", (x,))


def mean(x, axes=None):
    return x.graph.record("mean-reduce", (x,), {"axes": axes})


def total(x, axes=None):
    return x.graph.record("sum-reduce", (x,), {"axes": axes})


def absval(x):
    return x.graph.record("abs", (x,))


def square(x):
    return x.graph.record("square", (x,))


def sqrt(x):
    return x.graph.record("sqrt", (x,))


def concat(tensors):
    tensors = tuple(tensors)
    return tensors[0].graph.record("concat", tensors)


def slice_channels(x, start, stop):
    return x.graph.record("slice", (x,), {"start": start, "stop": stop})


def hflip(x):
    return x.graph.record("horizontal-flip", (x,))


def softmax_xent(logits, labels):
    return logits.graph.record(
        "softmax-cross-entropy-with-logits", (logits,), {"labels": tuple(int(v) for v in labels)}
    )


def fdiff(x, direction):
    return x.graph.record("spatial-forward-difference", (x,), {"direction": direction})


def reshape(x, shape):
    return x.graph.record("reshape", (x,), {"shape": tuple(shape)})
