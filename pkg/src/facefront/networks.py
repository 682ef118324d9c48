"""The four networks: coefficient regressor, generator, discriminator,
recognizer.

Architectures are pure functions of (image size, coefficient length,
class count); parameters are plain float64 arrays initialized from a
seeded Gaussian (std 0.02, biases zero). A forward pass binds the arrays
into a live graph as leaves, so the same parameter store can be bound
trainable in one graph and frozen in another. No normalization layers, no
dropout: forward passes are pure functions of (parameters, input).

* regressor: four stride-2 conv blocks (8, 16, 32, 64 channels) with
  leaky-relu, then a linear head onto the coefficient vector.
* generator: three stride-2 conv blocks down to a bottleneck, the
  coefficient vector mapped through a linear layer to a spatial map and
  channel-concatenated, then three upsample+conv blocks and a sigmoid
  output head.
* discriminator: five convs (strides 2, 2, 2, 1, 1) and a linear layer
  onto two logits; softmax of the logits is (P_real, P_generated).
* recognizer: four stride-2 conv blocks, global average pooling to the
  64-dim feature, then a linear classifier; the feature is exposed and
  does not depend on the classifier head.
"""

from collections import OrderedDict

import numpy as np

from . import ops

INIT_STD = 0.02
LEAK = 0.2
FEATURE_DIM = 64

_R_CHANNELS = (8, 16, 32, 64)
_G_ENC_CHANNELS = (16, 32, 64)
_G_FUSE_CHANNELS = 16
_G_DEC_CHANNELS = (32, 16, 8)
_D_CHANNELS = (8, 16, 32, 32, 32)
_D_STRIDES = (2, 2, 2, 1, 1)
_C_CHANNELS = (8, 16, 32, 64)

_NET_SEED_TAG = {"R": 0, "G": 1, "D": 2, "C": 3}
_INIT_STREAM = 6


def _conv_out(size, stride):
    # 3x3 kernel, zero padding 1
    return (size + 2 - 3) // stride + 1


def _conv_layer(name, cin, cout, stride):
    return {"kind": "conv", "name": name, "cin": cin, "cout": cout, "stride": stride}


def _linear_layer(name, cin, cout):
    return {"kind": "linear", "name": name, "cin": cin, "cout": cout}


def regressor_arch(image_size, coeff_dim):
    layers = []
    size, cin = image_size, 1
    for i, cout in enumerate(_R_CHANNELS):
        layers.append(_conv_layer("conv%d" % (i + 1), cin, cout, 2))
        size = _conv_out(size, 2)
        cin = cout
    flat = cin * size * size
    return {
        "net": "R",
        "convs": layers,
        "flat": flat,
        "head": _linear_layer("head", flat, coeff_dim),
    }


def generator_arch(image_size, coeff_dim):
    enc = []
    size, cin = image_size, 1
    for i, cout in enumerate(_G_ENC_CHANNELS):
        enc.append(_conv_layer("enc%d" % (i + 1), cin, cout, 2))
        size = _conv_out(size, 2)
        cin = cout
    fuse_out = _G_FUSE_CHANNELS * size * size
    dec = []
    dcin = cin + _G_FUSE_CHANNELS
    for i, cout in enumerate(_G_DEC_CHANNELS):
        dec.append(_conv_layer("dec%d" % (i + 1), dcin, cout, 1))
        dcin = cout
    return {
        "net": "G",
        "enc": enc,
        "fuse": _linear_layer("fuse", coeff_dim, fuse_out),
        "fuse_shape": (_G_FUSE_CHANNELS, size, size),
        "dec": dec,
        "out": _conv_layer("out", dcin, 1, 1),
    }


def discriminator_arch(image_size):
    layers = []
    size, cin = image_size, 1
    for i, (cout, stride) in enumerate(zip(_D_CHANNELS, _D_STRIDES)):
        layers.append(_conv_layer("conv%d" % (i + 1), cin, cout, stride))
        size = _conv_out(size, stride)
        cin = cout
    flat = cin * size * size
    return {
        "net": "D",
        "convs": layers,
        "flat": flat,
        "head": _linear_layer("head", flat, 2),
    }


def recognizer_arch(image_size, n_classes):
    layers = []
    size, cin = image_size, 1
    for i, cout in enumerate(_C_CHANNELS):
        layers.append(_conv_layer("conv%d" % (i + 1), cin, cout, 2))
        size = _conv_out(size, 2)
        cin = cout
    return {
        "net": "C",
        "convs": layers,
        "feature_dim": cin,
        "head": _linear_layer("head", cin, n_classes),
    }


def _iter_layers(arch):
    for key in ("convs", "enc", "dec"):
        for layer in arch.get(key, ()):
            yield layer
    for key in ("fuse", "head", "out"):
        if key in arch:
            yield arch[key]


class NetParams:
    """Named parameter arrays for one network."""

    def __init__(self, name, arch, arrays):
        self.name = name
        self.arch = arch
        self.arrays = arrays

    def copy(self):
        return NetParams(
            self.name,
            self.arch,
            OrderedDict((k, v.copy()) for k, v in self.arrays.items()),
        )

    def n_parameters(self):
        return sum(int(v.size) for v in self.arrays.values())

    def state_hash(self):
        import hashlib

        h = hashlib.sha256()
        for key, arr in self.arrays.items():
            h.update(key.encode())
            h.update(arr.tobytes())
        return h.hexdigest()


def init_net(arch, seed):
    """Seeded Gaussian init, std 0.02; biases zero."""
    rng = np.random.default_rng(
        (int(seed), _INIT_STREAM, _NET_SEED_TAG[arch["net"]])
    )
    arrays = OrderedDict()
    for layer in _iter_layers(arch):
        if layer["kind"] == "conv":
            w = rng.standard_normal((layer["cout"], layer["cin"], 3, 3)) * INIT_STD
            b = np.zeros((1, layer["cout"], 1, 1))
        else:
            w = rng.standard_normal((layer["cin"], layer["cout"])) * INIT_STD
            b = np.zeros(layer["cout"])
        arrays[layer["name"] + ".w"] = w
        arrays[layer["name"] + ".b"] = b
    return NetParams(arch["net"], arch, arrays)


def bind(graph, net, trainable=True):
    """Bind parameter arrays into a graph; frozen binds report zero grads."""
    bound = {}
    for key, arr in net.arrays.items():
        name = "%s/%s" % (net.name, key)
        if trainable:
            bound[key] = graph.parameter(arr, name=name)
        else:
            bound[key] = graph.leaf(arr, name=name)
    return bound


def collect_grads(bound, grad_map):
    return OrderedDict((key, grad_map.get(t)) for key, t in bound.items())


def _conv_block(bound, layer, x, activate=True):
    h = ops.conv2d(x, bound[layer["name"] + ".w"], stride=layer["stride"], pad=1)
    h = ops.add(h, bound[layer["name"] + ".b"])
    if activate:
        h = ops.leaky_relu(h, LEAK)
    return h


def _linear(bound, layer, x):
    h = ops.matmul(x, bound[layer["name"] + ".w"])
    return ops.add(h, bound[layer["name"] + ".b"])


def apply_regressor(graph, bound, arch, x):
    h = x
    for layer in arch["convs"]:
        h = _conv_block(bound, layer, h)
    n = h.shape[0]
    h = ops.reshape(h, (n, arch["flat"]))
    return _linear(bound, arch["head"], h)


def apply_generator(graph, bound, arch, x, p):
    h = x
    for layer in arch["enc"]:
        h = _conv_block(bound, layer, h)
    fused = ops.leaky_relu(_linear(bound, arch["fuse"], p), LEAK)
    c, fh, fw = arch["fuse_shape"]
    fused = ops.reshape(fused, (p.shape[0], c, fh, fw))
    h = ops.concat((h, fused))
    for layer in arch["dec"]:
        h = ops.upsample2x(h)
        h = _conv_block(bound, layer, h)
    h = _conv_block(bound, arch["out"], h, activate=False)
    return ops.sigmoid(h)


def apply_discriminator(graph, bound, arch, x):
    h = x
    for layer in arch["convs"]:
        h = _conv_block(bound, layer, h)
    n = h.shape[0]
    h = ops.reshape(h, (n, arch["flat"]))
    return _linear(bound, arch["head"], h)


def apply_recognizer(graph, bound, arch, x):
    """Returns (logits, feature); the feature ignores the classifier head."""
    h = x
    for layer in arch["convs"]:
        h = _conv_block(bound, layer, h)
    feat = ops.mean(h, axes=(2, 3))
    logits = _linear(bound, arch["head"], feat)
    return logits, feat


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
