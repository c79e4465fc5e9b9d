"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

from .autograd import backward

REL_FLOOR = 1e-6


def relative_error(analytic: float, numeric: float) -> float:
    """|a - n| / max(|n|, floor): doubling the gradient reads as 1.0."""
    return abs(analytic - numeric) / max(abs(numeric), REL_FLOOR)


def sample_coordinates(params, n_coords: int, rng: np.random.Generator):
    """At least one coordinate from every tensor, the rest uniform over all."""
    coords = [(k, int(rng.integers(p.data.size))) for k, p in enumerate(params)]
    sizes = np.array([p.data.size for p in params], dtype=float)
    extra = max(n_coords - len(coords), 0)
    for k in rng.choice(len(params), size=extra, p=sizes / sizes.sum()):
        coords.append((int(k), int(rng.integers(params[k].data.size))))
    return coords


def grad_check(loss_fn, params, eps: float = 1e-4, n_coords: int = 20, seed: int = 0, grads=None):
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn()`` must rebuild the graph from ``params`` and return a scalar
    Tensor; any randomness inside must be re-seeded on every call. ``grads``
    overrides the analytic gradients (used to test the checker itself).
    """
    params = list(params)
    if grads is None:
        loss = loss_fn()
        backward(loss)
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, flat in sample_coordinates(params, n_coords, rng):
        view = params[k].data.reshape(-1)
        old = view[flat]
        view[flat] = old + eps
        up = float(loss_fn().data)
        view[flat] = old - eps
        down = float(loss_fn().data)
        view[flat] = old
        numeric = (up - down) / (2 * eps)
        worst = max(worst, relative_error(float(grads[k].reshape(-1)[flat]), numeric))
    return worst
