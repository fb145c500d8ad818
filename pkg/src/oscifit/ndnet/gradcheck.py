"""Central finite-difference checks of layer gradients.

The scalar probed is ``sum(R * layer(x))`` for a fixed random ``R``, so the
analytic input gradient is ``layer.backward(R)`` and parameter gradients land
in ``layer.grads``. Run these in float64.
"""

import numpy as np

__all__ = ["GradReport", "check_layer", "check_function", "rel_error"]


class GradReport:
    def __init__(self, name, errors):
        self.name = name
        self.errors = np.asarray(errors, dtype=np.float64)

    @property
    def worst(self):
        return float(self.errors.max()) if self.errors.size else 0.0

    def __repr__(self):
        return f"GradReport({self.name!r}, points={self.errors.size}, worst={self.worst:.3g})"


def rel_error(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def _probe(target, count, rng):
    flat = target.reshape(-1)
    idx = rng.choice(flat.size, size=min(count, flat.size), replace=False)
    return flat, idx


def check_function(fun, array, analytic, count, rng, h=1e-5):
    """Compare ``analytic`` (same shape as ``array``) with central differences of ``fun()``
    taken by perturbing ``array`` in place at ``count`` random entries."""
    flat, idx = _probe(array, count, rng)
    grad = analytic.reshape(-1)
    errors = []
    for i in idx:
        keep = flat[i]
        flat[i] = keep + h
        up = fun()
        flat[i] = keep - h
        down = fun()
        flat[i] = keep
        errors.append(rel_error(grad[i], (up - down) / (2 * h)))
    return errors


def check_layer(layer, x, count=50, rng=None, h=1e-5):
    """Return one GradReport per checked tensor: input (if differentiable) then params."""
    rng = rng if rng is not None else np.random.default_rng(0)
    y = layer.forward(x)
    R = rng.standard_normal(np.shape(y))

    def loss():
        return float(np.sum(R * layer.forward(x)))

    layer.forward(x)
    dx = layer.backward(R)
    grads = [g.copy() for g in layer.grads]
    reports = []
    if dx is not None:
        reports.append(GradReport("input", check_function(loss, x, dx, count, rng, h)))
    for k, (p, g) in enumerate(zip(layer.params, grads)):
        reports.append(GradReport(f"param{k}", check_function(loss, p, g, count, rng, h)))
    return reports
