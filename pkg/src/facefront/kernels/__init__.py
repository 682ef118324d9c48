"""Convolution kernel backend selection.

Two interchangeable implementations of the conv2d forward/backward
kernels exist: a numpy im2col path (``conv_py``) whose inner product
runs on whatever BLAS numpy links, and a compiled direct-loop Cython
extension (``_conv_cy``) that needs no im2col scratch memory. On a
BLAS-backed numpy the im2col path is the faster one at the default
image sizes, so ``auto`` picks it; the compiled kernel pulls ahead once
the patch matrices outgrow the cache (large images times many
channels), and ``FACEFRONT_BACKEND`` forces either choice (``python``
or ``cython``). Run ``python3 -m facefront.bench`` to see both regimes
measured. The selection happens once at import so a given process
always runs a single backend, keeping results reproducible run to run.
The two backends agree to floating-point rounding (checked in the test
suite), not bit for bit, because their summation orders differ.
"""

import os

from . import conv_py

_requested = os.environ.get("FACEFRONT_BACKEND", "auto").strip().lower()

if _requested in ("auto", "", "python", "py", "numpy"):
    _impl = conv_py
    BACKEND = "python"
elif _requested in ("cython", "ext", "compiled"):
    from . import _conv_cy as _impl  # raises ImportError when not built

    BACKEND = "cython"
else:
    raise ValueError(
        "FACEFRONT_BACKEND must be 'python', 'cython' or 'auto', got %r" % _requested
    )

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward


def available_backends():
    """Names of the backends importable in this environment."""
    names = ["python"]
    try:
        from . import _conv_cy  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Return the kernel module for an explicit backend name."""
    if name == "python":
        return conv_py
    if name == "cython":
        from . import _conv_cy

        return _conv_cy
    raise ValueError("unknown backend %r" % name)
