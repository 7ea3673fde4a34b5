"""Central finite-difference gradient checking for layers.

Used by both the layer unit tests and the acceptance suite. Everything
runs in float64 so the difference quotient can resolve the 1e-4 bound.
"""

import numpy as np

from sps.nn import (
    AvgPool, BatchNorm, Conv2d, Dense, Dropout, GlobalPool, ReLU, Softmax,
    softmax_cross_entropy,
)

STEP = 1e-3
TOL = 1e-4


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def numeric_grad(f, x: np.ndarray, h: float = STEP) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def check_layer(layer, x: np.ndarray, rng_factory=None, check_params=True):
    """Max relative error between analytic and numeric grads for a layer.

    The scalar objective is sum(forward(x) * proj) for a fixed random
    projection. rng_factory recreates an identical generator per call so
    stochastic layers (dropout) see the same draw in every evaluation.
    """
    proj_rng = np.random.default_rng(99)
    out = layer.forward(x, training=True,
                        rng=rng_factory() if rng_factory else None)
    proj = proj_rng.standard_normal(out.shape)

    def objective():
        y = layer.forward(x, training=True,
                          rng=rng_factory() if rng_factory else None)
        return float((y * proj).sum())

    layer.forward(x, training=True, rng=rng_factory() if rng_factory else None)
    gx = layer.backward(proj.astype(x.dtype))
    errs = {}
    if gx is not None:
        errs["input"] = rel_err(gx, numeric_grad(objective, x))
    if check_params:
        for p in layer.params():
            errs[p.name] = rel_err(p.grad, numeric_grad(objective, p.value))
    return errs


def _away_from_kinks(rng, shape, margin=5e-3):
    x = rng.standard_normal(shape)
    x = np.where(np.abs(x) < margin, x + np.sign(x + 1e-12) * margin, x)
    return x


def conv_errs(seed):
    rng = np.random.default_rng(seed)
    layer = Conv2d(3, 4, 3, rng, dtype=np.float64)
    x = rng.standard_normal((2, 5, 6, 3))
    return check_layer(layer, x)


def batchnorm_errs(seed):
    rng = np.random.default_rng(seed)
    layer = BatchNorm(5, dtype=np.float64)
    layer.gamma.value[:] = rng.uniform(0.5, 1.5, 5)
    layer.beta.value[:] = rng.standard_normal(5)
    x = rng.standard_normal((3, 4, 4, 5))
    return check_layer(layer, x)


def relu_errs(seed):
    rng = np.random.default_rng(seed)
    layer = ReLU()
    x = _away_from_kinks(rng, (3, 4, 4, 2))
    return check_layer(layer, x)


def avgpool_errs(seed):
    rng = np.random.default_rng(seed)
    layer = AvgPool(2, 3)
    x = rng.standard_normal((2, 7, 7, 3))  # remainder rows/cols drop
    return check_layer(layer, x)


def globalpool_errs(seed):
    rng = np.random.default_rng(seed)
    layer = GlobalPool()
    # keep the temporal argmax unambiguous under +-h wiggles
    while True:
        x = rng.standard_normal((2, 5, 4, 3))
        means = x.mean(axis=2)
        top2 = np.sort(means, axis=1)[:, -2:, :]
        if (top2[:, 1] - top2[:, 0]).min() > 10 * STEP:
            return check_layer(layer, x)


def dense_errs(seed):
    rng = np.random.default_rng(seed)
    layer = Dense(6, 4, rng, dtype=np.float64)
    x = rng.standard_normal((3, 6))
    return check_layer(layer, x)


def dropout_errs(seed):
    rng = np.random.default_rng(seed)
    layer = Dropout(0.5)
    x = rng.standard_normal((4, 6))
    return check_layer(layer, x, rng_factory=lambda: np.random.default_rng(seed + 1))


def softmax_errs(seed):
    rng = np.random.default_rng(seed)
    layer = Softmax()
    x = rng.standard_normal((4, 7))
    return check_layer(layer, x)


def fused_softmax_ce_errs(seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((4, 6))
    targets = rng.dirichlet(np.ones(6), size=4)

    _, analytic = softmax_cross_entropy(logits, targets)
    numeric = numeric_grad(lambda: softmax_cross_entropy(logits, targets)[0], logits)
    return {"logits": rel_err(analytic, numeric)}


LAYER_CHECKS = {
    "conv2d": conv_errs,
    "batchnorm": batchnorm_errs,
    "relu": relu_errs,
    "avgpool": avgpool_errs,
    "globalpool": globalpool_errs,
    "dense": dense_errs,
    "dropout": dropout_errs,
    "softmax": softmax_errs,
    "softmax_cross_entropy": fused_softmax_ce_errs,
}


def run_all(n_seeds: int = 20) -> dict[str, float]:
    """Worst relative error per layer kind over n_seeds seeds."""
    worst = {}
    for name, fn in LAYER_CHECKS.items():
        worst[name] = max(max(fn(seed).values()) for seed in range(n_seeds))
    return worst
