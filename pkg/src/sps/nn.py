"""Minimal deterministic CNN kernel: layers, loss, Adam, mixup.

Design notes that matter for reproducibility and tests:

* Activations are laid out [batch, time, freq, channels] (channels-last);
  conv kernels are [k, k, c_in, c_out]. This keeps the im2col gather and
  all three convolution GEMMs contiguous for BLAS.
* Layers are dtype-generic: float32 in production, float64 in gradient
  checks. Reductions (means, sums, norm statistics) accumulate in float64
  regardless of the activation dtype.
* Every forward caches exactly what its backward needs, nothing else.
  backward() assigns parameter gradients (no accumulation across calls).
* Dropout takes its randomness from the Generator passed to forward, so a
  seeded training loop is bit-reproducible.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


class ShapeError(ValueError):
    """Tensor extents incompatible with a layer or operation."""


class Param:
    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def size(self) -> int:
        return self.value.size


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _sum64(x, axis):
    return x.sum(axis=axis, dtype=np.float64)


class Layer:
    """Base layer. Subclasses set `name` when assembled into a network."""

    name = ""

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def params(self) -> list[Param]:
        return []

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return []

    def describe(self) -> str:
        return type(self).__name__


class Conv2d(Layer):
    """k x k cross-correlation, stride 1, zero 'same' padding, with bias.

    Spatial extents are preserved, which is what makes the pooling
    arithmetic of the fixed architectures come out right.
    """

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 dtype=np.float32):
        if k % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {k}")
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.weight = Param("weight", kaiming_uniform(rng, (k, k, c_in, c_out),
                                                      k * k * c_in, dtype))
        self.bias = Param("bias", np.zeros(c_out, dtype=dtype))
        self.input_grad_needed = True  # builder clears this on the first layer
        self._colbuf = None
        self._x_padded = None

    def params(self):
        return [self.weight, self.bias]

    def describe(self):
        return f"Conv {self.k}x{self.k} @ {self.c_out}"

    def _col(self, xp_b: np.ndarray, h: int, w: int) -> np.ndarray:
        """im2col for one padded sample [Hp, Wp, C] -> [h*w, k*k*C]."""
        k = self.k
        hp, wp, c = xp_b.shape
        key = (h, w, k, c, xp_b.dtype)
        if self._colbuf is None or self._colbuf[0] != key:
            self._colbuf = (key, np.empty((h, w, k, k * c), dtype=xp_b.dtype))
        col = self._colbuf[1]
        flat = xp_b.reshape(hp, wp * c)
        view = as_strided(
            flat,
            shape=(hp, w, k * c),
            strides=(flat.strides[0], c * flat.itemsize, flat.itemsize),
        )
        for di in range(k):
            col[:, :, di, :] = view[di:di + h]
        return col.reshape(h * w, k * k * c)

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise ShapeError(
                f"conv expects [b, h, w, {self.c_in}], got input channels "
                f"{x.shape[3] if x.ndim == 4 else '?'} (shape {x.shape})"
            )
        b, h, w, _ = x.shape
        p = self.k // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        wm = self.weight.value.reshape(-1, self.c_out)
        out = np.empty((b, h, w, self.c_out), dtype=x.dtype)
        for i in range(b):
            np.matmul(self._col(xp[i], h, w), wm, out=out[i].reshape(h * w, self.c_out))
        out += self.bias.value
        self._x_padded = xp
        self._in_shape = x.shape
        return out

    def backward(self, grad):
        b, h, w, _ = self._in_shape
        p, k = self.k // 2, self.k
        xp = self._x_padded
        gw = np.zeros((k * k * self.c_in, self.c_out), dtype=np.float64)
        for i in range(b):
            col = self._col(xp[i], h, w)
            gw += col.T @ grad[i].reshape(h * w, self.c_out)
        self.weight.grad[...] = gw.reshape(self.weight.value.shape)
        self.bias.grad[...] = _sum64(grad, axis=(0, 1, 2))
        if not self.input_grad_needed:
            return None
        # grad wrt input = same-padded correlation of grad with the
        # spatially flipped, channel-transposed kernel
        wrev = np.ascontiguousarray(
            self.weight.value[::-1, ::-1].transpose(0, 1, 3, 2)
        ).reshape(-1, self.c_in)
        gp = np.pad(grad, ((0, 0), (p, p), (p, p), (0, 0)))
        gx = np.empty(self._in_shape, dtype=grad.dtype)
        saved = self._colbuf
        self._colbuf = None  # grad has c_out channels; use a separate buffer
        for i in range(b):
            np.matmul(self._col(gp[i], h, w), wrev, out=gx[i].reshape(h * w, self.c_in))
        self._colbuf = saved
        return gx


class BatchNorm(Layer):
    """Per-channel batch normalization over (batch, h, w) with affine terms."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9,
                 dtype=np.float32):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Param("gamma", np.ones(channels, dtype=dtype))
        self.beta = Param("beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def describe(self):
        return f"BN @ {self.channels}"

    def forward(self, x, training=False, rng=None):
        if x.shape[-1] != self.channels:
            raise ShapeError(f"batchnorm expects {self.channels} channels, got {x.shape[-1]}")
        axes = tuple(range(x.ndim - 1))
        if training:
            n = x.size // self.channels
            mean = (_sum64(x, axes) / n).astype(x.dtype)
            var = (_sum64((x - mean) ** 2, axes) / n).astype(x.dtype)
            self.running_mean[...] = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var[...] = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, training)
        return self.gamma.value * xhat + self.beta.value

    def backward(self, grad):
        xhat, inv_std, training = self._cache
        axes = tuple(range(grad.ndim - 1))
        self.beta.grad[...] = _sum64(grad, axes)
        self.gamma.grad[...] = _sum64(grad * xhat, axes)
        dxhat = grad * self.gamma.value
        if not training:
            return dxhat * inv_std
        n = grad.size // self.channels
        mean_dxhat = (_sum64(dxhat, axes) / n).astype(grad.dtype)
        mean_dxhat_xhat = (_sum64(dxhat * xhat, axes) / n).astype(grad.dtype)
        return inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)


class ReLU(Layer):
    def forward(self, x, training=False, rng=None):
        self._mask = x > 0
        return np.where(self._mask, x, x.dtype.type(0))

    def backward(self, grad):
        return np.where(self._mask, grad, grad.dtype.type(0))

    def describe(self):
        return "ReLU"


class AvgPool(Layer):
    """Non-overlapping ph x pw mean pooling; trailing remainder rows/cols drop."""

    def __init__(self, ph: int, pw: int):
        self.ph, self.pw = ph, pw

    def describe(self):
        return f"Avg Pool {self.ph}x{self.pw}"

    def forward(self, x, training=False, rng=None):
        b, h, w, c = x.shape
        if h < self.ph or w < self.pw:
            raise ShapeError(
                f"pool {self.ph}x{self.pw} larger than input extents {h}x{w}"
            )
        ho, wo = h // self.ph, w // self.pw
        self._in_shape = x.shape
        blocks = x[:, :ho * self.ph, :wo * self.pw].reshape(
            b, ho, self.ph, wo, self.pw, c
        )
        out = (_sum64(blocks, (2, 4)) / (self.ph * self.pw)).astype(x.dtype)
        return out

    def backward(self, grad):
        b, h, w, c = self._in_shape
        ho, wo = h // self.ph, w // self.pw
        gx = np.zeros(self._in_shape, dtype=grad.dtype)
        share = grad / grad.dtype.type(self.ph * self.pw)
        gx[:, :ho * self.ph, :wo * self.pw].reshape(
            b, ho, self.ph, wo, self.pw, c
        )[...] = share[:, :, None, :, None, :]
        return gx


class GlobalPool(Layer):
    """Mean over the frequency axis, then max over the time axis.

    Ties in the temporal max go to the first frame, which pins backward
    routing and makes eval-mode inference bit-deterministic.
    """

    def forward(self, x, training=False, rng=None):
        b, t, f, c = x.shape
        freq_mean = (_sum64(x, 2) / f).astype(x.dtype)  # [b, t, c]
        idx = np.argmax(freq_mean, axis=1)  # [b, c], first index on ties
        self._in_shape = x.shape
        self._idx = idx
        return np.take_along_axis(freq_mean, idx[:, None, :], axis=1)[:, 0, :]

    def backward(self, grad):
        b, t, f, c = self._in_shape
        gt = np.zeros((b, t, c), dtype=grad.dtype)
        np.put_along_axis(gt, self._idx[:, None, :], grad[:, None, :], axis=1)
        return np.repeat(gt[:, :, None, :] / grad.dtype.type(f), f, axis=2)

    def describe(self):
        return "Global Pooling"


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32):
        self.n_in, self.n_out = n_in, n_out
        self.weight = Param("weight", kaiming_uniform(rng, (n_in, n_out), n_in, dtype))
        self.bias = Param("bias", np.zeros(n_out, dtype=dtype))

    def params(self):
        return [self.weight, self.bias]

    def describe(self):
        return f"FC {self.n_out}"

    def forward(self, x, training=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"dense expects [b, {self.n_in}], got {x.shape}")
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, grad):
        self.weight.grad[...] = self._x.T @ grad
        self.bias.grad[...] = _sum64(grad, 0)
        return grad @ self.weight.value.T


class Dropout(Layer):
    """Inverted dropout; identity in eval mode."""

    def __init__(self, p: float = 0.5):
        if not 0 <= p < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
        self.p = p

    def describe(self):
        return f"Dropout {self.p}"

    def forward(self, x, training=False, rng=None):
        if not training or self.p == 0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        keep = (rng.random(x.shape) >= self.p)
        self._mask = keep.astype(x.dtype) / x.dtype.type(1 - self.p)
        return x * self._mask

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask


class Softmax(Layer):
    """Row softmax, stabilized by max subtraction."""

    def forward(self, x, training=False, rng=None):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        s = e / e.sum(axis=1, keepdims=True, dtype=np.float64).astype(x.dtype)
        self._s = s
        return s

    def backward(self, grad):
        s = self._s
        dot = _sum64(grad * s, 1).astype(grad.dtype)
        return s * (grad - dot[:, None])

    def describe(self):
        return "softmax"


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True, dtype=np.float64).astype(logits.dtype)


class Sequential(Layer):
    def __init__(self, layers: list[Layer], name: str = ""):
        self.layers = list(layers)
        self.name = name

    def __iter__(self):
        return iter(self.layers)

    def forward(self, x, training=False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def params(self):
        return [p for layer in self.layers for p in layer.params()]


PROB_FLOOR = 1e-15


def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean categorical cross entropy on probability vectors (soft targets ok).

    Returns (loss, grad wrt probs). Probabilities are clamped to
    [1e-15, 1] inside the log; the gradient is zero where the clamp binds.
    """
    if probs.shape != targets.shape:
        raise ShapeError(f"probs {probs.shape} vs targets {targets.shape}")
    b = probs.shape[0]
    clamped = np.clip(probs, PROB_FLOOR, 1.0)
    loss = float(-(targets * np.log(clamped)).sum(dtype=np.float64) / b)
    grad = np.where(
        (probs >= PROB_FLOOR) & (probs <= 1.0),
        -targets / clamped / b,
        0.0,
    ).astype(probs.dtype)
    return loss, grad


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Fused softmax + cross entropy; gradient is exact wrt the logits."""
    if logits.shape != targets.shape:
        raise ShapeError(f"logits {logits.shape} vs targets {targets.shape}")
    b = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True, dtype=np.float64)).astype(logits.dtype)
    loss = float(-(targets * log_probs).sum(dtype=np.float64) / b)
    grad = (np.exp(log_probs) - targets) / logits.dtype.type(b)
    return loss, grad.astype(logits.dtype)


class Adam:
    """Bias-corrected Adam with the usual defaults; epsilon sits outside
    the square root, so a zero gradient never moves a parameter."""

    def __init__(self, params: list[Param], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def mixup(batch_x: np.ndarray, batch_y: np.ndarray, alpha: float,
          rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Convex input/label combinations with per-pair Beta(alpha, alpha) weights.

    Pairs are (i, perm[i]) for a random permutation of the batch.
    """
    if alpha <= 0:
        raise ValueError(f"mixup alpha must be positive, got {alpha}")
    b = batch_x.shape[0]
    perm = rng.permutation(b)
    lam = rng.beta(alpha, alpha, size=b)
    lam_x = lam.reshape((b,) + (1,) * (batch_x.ndim - 1)).astype(batch_x.dtype)
    lam_y = lam[:, None].astype(batch_y.dtype)
    mixed_x = lam_x * batch_x + (1 - lam_x) * batch_x[perm]
    mixed_y = lam_y * batch_y + (1 - lam_y) * batch_y[perm]
    return mixed_x, mixed_y
