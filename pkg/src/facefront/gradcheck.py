"""Central finite-difference oracle for tape gradients.

The check is directional: pick a random unit direction v over all inputs,
compare the analytic directional derivative <grad, v> against the second
order central difference (f(x + h v) - f(x - h v)) / (2 h). Directions and
base points must stay away from the measure-zero kinks of abs, relu and
friends; callers control that through the points they pass in.
"""

import numpy as np

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-4


def directional_errors(f, arrays, n_directions=10, h=DEFAULT_H, seed=0):
    """Relative errors of the tape gradient of ``f`` along random directions.

    ``f`` maps a list of float64 arrays to ``(loss, grads)`` where ``loss``
    is a python float and ``grads`` is a list of arrays aligned with the
    inputs. Returns a list of per-direction relative errors.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    _, grads = f([a.copy() for a in arrays])
    rng = np.random.default_rng((int(seed), 90001))
    errors = []
    for _ in range(n_directions):
        dirs = [rng.standard_normal(a.shape) for a in arrays]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        if norm == 0.0:
            norm = 1.0
        dirs = [d / norm for d in dirs]
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        lp, _ = f([a + h * d for a, d in zip(arrays, dirs)])
        lm, _ = f([a - h * d for a, d in zip(arrays, dirs)])
        numeric = (lp - lm) / (2.0 * h)
        denom = max(abs(analytic), abs(numeric), 1e-6)
        errors.append(abs(analytic - numeric) / denom)
    return errors


def max_directional_error(f, arrays, n_directions=10, h=DEFAULT_H, seed=0):
    return max(directional_errors(f, arrays, n_directions, h, seed))


def away_from(x, centers, margin):
    """Push values of ``x`` at least ``margin`` away from given kink centers."""
    x = np.asarray(x, dtype=np.float64).copy()
    for c in centers:
        close = np.abs(x - c) < margin
        x[close] = c + margin * np.where(x[close] >= c, 1.0, -1.0)
    return x
