"""Independent oracles shared by the unit and acceptance tests."""

import numpy as np

from malobf.mlp import DenseLayer, ModelParams, bce_loss, forward


def numeric_gradients(model, x, y, h=1e-5):
    """Central finite differences of the mean BCE loss, parameter by parameter."""
    grads = []
    for layer in model.layers:
        pair = []
        for arr in (layer.weights, layer.bias):
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + h
                up = bce_loss(forward(model, x)[0], y)
                arr[idx] = old - h
                down = bce_loss(forward(model, x)[0], y)
                arr[idx] = old
                g[idx] = (up - down) / (2 * h)
            pair.append(g)
        grads.append(tuple(pair))
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for (aw, ab), (nw, nb) in zip(analytic, numeric):
        for a, n in ((aw, nw), (ab, nb)):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def random_problem(rng):
    """Small random network (all dims <= 8) with a batch of at most 4 rows.

    Problems whose output saturates into the loss clipping band are redrawn:
    there the clipped loss is flat and differencing it says nothing.
    """
    while True:
        model, x, y = _draw_problem(rng)
        logits = forward(model, x)[1]["pre"][-1]
        if np.all(np.abs(logits) < 12):
            return model, x, y


def _draw_problem(rng):
    input_dim = int(rng.integers(1, 9))
    widths = [int(w) for w in rng.integers(1, 9, size=rng.integers(1, 4))]
    dims = [input_dim] + widths + [1]
    layers = [
        DenseLayer(rng.normal(0, 0.8, (o, i)), rng.normal(0, 0.3, o))
        for i, o in zip(dims, dims[1:])
    ]
    n = int(rng.integers(1, 5))
    x = rng.normal(0, 1, (n, input_dim))
    y = rng.integers(0, 2, n)
    return ModelParams(layers), x, y


def scalar_nesterov(theta, curvature, steps, lr0, mu, decay):
    """Plain-float Nesterov trace on f(t) = curvature * t**2 / 2."""
    v = 0.0
    trace = []
    for t in range(steps):
        g = curvature * theta
        lr = lr0 / (1.0 + decay * t)
        v = mu * v - lr * g
        theta = theta + mu * v - lr * g
        trace.append(theta)
    return trace
