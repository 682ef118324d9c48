"""Timing comparison of the convolution kernel backends.

Runs the conv2d forward and backward kernels on the shapes the training
loop actually uses and prints one table row per (backend, shape). Run as

    python3 -m facefront.bench [repeats]

The compiled backend row only appears when the extension was built.
"""

import sys
import time

import numpy as np

from .kernels import available_backends, get_backend

# (label, batch, cin, cout, size): the joint-training workload at the
# default 32x32 image size, the encoder's downsampled stages, and one
# large-image shape where the im2col scratch outgrows the cache.
SHAPES = (
    ("enc 16x1x32x32 -> 16ch", 16, 1, 16, 32),
    ("enc 16x16x16x16 -> 32ch", 16, 16, 32, 16),
    ("enc 16x32x8x8 -> 64ch", 16, 32, 64, 8),
    ("dec 16x64x8x8 -> 32ch", 16, 64, 32, 8),
    ("big 4x16x128x128 -> 16ch", 4, 16, 16, 128),
)


def time_backend(module, batch, cin, cout, size, repeats):
    """Best-of-N wall time in seconds for one forward plus one backward."""
    rng = np.random.default_rng(0)
    x = rng.standard_normal((batch, cin, size, size))
    w = rng.standard_normal((cout, cin, 3, 3))
    out = module.conv2d_forward(x, w, 1, 1)
    gout = np.ones_like(out)
    best_f = best_b = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        module.conv2d_forward(x, w, 1, 1)
        t1 = time.perf_counter()
        module.conv2d_backward(x, w, 1, 1, gout)
        t2 = time.perf_counter()
        best_f = min(best_f, t1 - t0)
        best_b = min(best_b, t2 - t1)
    return best_f, best_b


def run(repeats=5, out=sys.stdout):
    backends = available_backends()
    rows = []
    for name in backends:
        module = get_backend(name)
        for label, batch, cin, cout, size in SHAPES:
            fwd, bwd = time_backend(module, batch, cin, cout, size, repeats)
            rows.append((name, label, fwd, bwd))
    width = max(len(r[1]) for r in rows)
    out.write("%-8s %-*s %12s %12s\n" % ("backend", width, "shape", "fwd_ms", "bwd_ms"))
    for name, label, fwd, bwd in rows:
        out.write(
            "%-8s %-*s %12.3f %12.3f\n"
            % (name, width, label, 1e3 * fwd, 1e3 * bwd)
        )
    if "cython" in backends:
        py = [r for r in rows if r[0] == "python"]
        cy = [r for r in rows if r[0] == "cython"]
        total_py = sum(r[2] + r[3] for r in py)
        total_cy = sum(r[2] + r[3] for r in cy)
        out.write("speedup total python/cython: %.2fx\n" % (total_py / total_cy))
    return rows


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    repeats = int(argv[0]) if argv else 5
    run(repeats=repeats)
    return 0


if __name__ == "__main__":
    sys.exit(main())
