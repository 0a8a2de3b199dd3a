"""From-scratch CNN building blocks on plain numpy arrays.

Each layer caches what its backward pass needs during forward; backward
consumes that cache and fills per-parameter gradient buffers. Tensors are
float32 by default, with float64 supported throughout for gradient
checking. No autodiff anywhere: every gradient below is hand-derived.
"""

from __future__ import annotations

import numpy as np


class Layer:
    """Base layer. params()/grads() map names to arrays sharing storage
    with the layer, so in-place optimizer updates stick."""

    name = ""

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state that still belongs in a checkpoint."""
        return {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_shape(self, in_shape: tuple) -> tuple:
        return tuple(in_shape)


def _im2col3(x: np.ndarray) -> np.ndarray:
    """Unfold zero-padded 3x3 windows: (N,C,H,W) -> (N*H*W, C*9)."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * w, c * 9)


def _col2im3(dcols: np.ndarray, shape: tuple) -> np.ndarray:
    """Adjoint of _im2col3: scatter-add window gradients back to (N,C,H,W)."""
    n, c, h, w = shape
    d = dcols.reshape(n, h, w, c, 3, 3).transpose(0, 3, 4, 5, 1, 2)
    dxp = np.zeros((n, c, h + 2, w + 2), dtype=dcols.dtype)
    for di in range(3):
        for dj in range(3):
            dxp[:, :, di:di + h, dj:dj + w] += d[:, :, di, dj]
    return dxp[:, :, 1:h + 1, 1:w + 1]


class Conv2D(Layer):
    """3x3 convolution, stride 1, zero padding 1: spatial dims are preserved.

    Weights are He-normal (std sqrt(2/fan_in)), biases zero.
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 dtype=np.float32, name: str = "conv"):
        self.name = name
        self.c_in, self.c_out = c_in, c_out
        scale = np.sqrt(2.0 / (c_in * 9))
        self.w = (rng.standard_normal((c_out, c_in, 3, 3)) * scale).astype(dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.dw, "b": self.db}

    def forward(self, x, training=False):
        n, c, h, w = x.shape
        if c != self.c_in:
            raise ValueError(f"{self.name}: expected {self.c_in} input channels, got {c}")
        cols = _im2col3(x)
        out = cols @ self.w.reshape(self.c_out, -1).T + self.b
        self._cache = (cols, x.shape)
        return np.ascontiguousarray(
            out.reshape(n, h, w, self.c_out).transpose(0, 3, 1, 2))

    def backward(self, grad_out):
        if self._cache is None:
            raise RuntimeError("conv backward called before forward")
        cols, x_shape = self._cache
        n, c, h, w = x_shape
        g = grad_out.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        self.dw[...] = (g.T @ cols).reshape(self.w.shape)
        self.db[...] = g.sum(axis=0)
        dcols = g @ self.w.reshape(self.c_out, -1)
        return _col2im3(dcols, x_shape)


class BatchNorm(Layer):
    """Channel-wise batch normalization with running statistics.

    Training mode normalizes with the biased batch mean/variance over the
    batch and spatial axes, then updates the running stats as
    r <- (1 - momentum) * r + momentum * batch_stat. Inference normalizes
    with the running stats. A zero-variance batch is allowed; the epsilon
    then carries the whole denominator.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32, name: str = "bn"):
        self.name = name
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)
        self._cache = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.dgamma, "beta": self.dbeta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    @staticmethod
    def _axes_and_shape(x):
        if x.ndim == 4:
            return (0, 2, 3), (1, -1, 1, 1)
        if x.ndim == 2:
            return (0,), (1, -1)
        raise ValueError(f"batchnorm expects 2D or 4D input, got {x.ndim}D")

    def forward(self, x, training=False):
        axes, bshape = self._axes_and_shape(x)
        if x.shape[1] != self.channels:
            raise ValueError(f"{self.name}: expected {self.channels} channels, got {x.shape[1]}")
        if training:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean[...] = ((1 - m) * self.running_mean + m * mu).astype(
                self.running_mean.dtype)
            self.running_var[...] = ((1 - m) * self.running_var + m * var).astype(
                self.running_var.dtype)
        else:
            mu = self.running_mean.astype(x.dtype)
            var = self.running_var.astype(x.dtype)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu.reshape(bshape)) * inv.reshape(bshape)
        self._cache = (xhat, inv, axes, bshape, training,
                       x.size // self.channels)
        return self.gamma.reshape(bshape) * xhat + self.beta.reshape(bshape)

    def backward(self, grad_out):
        if self._cache is None:
            raise RuntimeError("batchnorm backward called before forward")
        xhat, inv, axes, bshape, training, n = self._cache
        self.dgamma[...] = (grad_out * xhat).sum(axis=axes)
        self.dbeta[...] = grad_out.sum(axis=axes)
        gscaled = self.gamma.reshape(bshape) * inv.reshape(bshape)
        if not training:
            return grad_out * gscaled
        # couple through the batch mean and variance
        sum_g = grad_out.sum(axis=axes).reshape(bshape)
        sum_gx = (grad_out * xhat).sum(axis=axes).reshape(bshape)
        return gscaled * (grad_out - sum_g / n - xhat * sum_gx / n)


class ReLU(Layer):
    def __init__(self, name: str = "relu"):
        self.name = name
        self._mask = None

    def forward(self, x, training=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0)

    def backward(self, grad_out):
        return np.where(self._mask, grad_out, 0)


class MaxPool2x2(Layer):
    """2x2 max pooling with stride 2. Ties take the first maximum in
    row-major order within each window."""

    def __init__(self, name: str = "pool"):
        self.name = name
        self._cache = None

    def forward(self, x, training=False):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"{self.name}: spatial dims must be even, got {h}x{w}")
        cells = (x.reshape(n, c, h // 2, 2, w // 2, 2)
                 .transpose(0, 1, 2, 4, 3, 5)
                 .reshape(n, c, h // 2, w // 2, 4))
        idx = cells.argmax(axis=-1)
        out = np.take_along_axis(cells, idx[..., None], axis=-1)[..., 0]
        self._cache = (idx, x.shape)
        return out

    def backward(self, grad_out):
        if self._cache is None:
            raise RuntimeError("maxpool backward called before forward")
        idx, (n, c, h, w) = self._cache
        d = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad_out.dtype)
        np.put_along_axis(d, idx[..., None], grad_out[..., None], axis=-1)
        return (d.reshape(n, c, h // 2, w // 2, 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h, w))

    def out_shape(self, in_shape):
        n, c, h, w = in_shape
        return (n, c, h // 2, w // 2)


class Flatten(Layer):
    def __init__(self, name: str = "flatten"):
        self.name = name
        self._shape = None

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._shape)


class Dense(Layer):
    """Fully connected layer y = x @ w + b with He-normal init."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 dtype=np.float32, name: str = "fc"):
        self.name = name
        self.d_in, self.d_out = d_in, d_out
        self.w = (rng.standard_normal((d_in, d_out)) * np.sqrt(2.0 / d_in)).astype(dtype)
        self.b = np.zeros(d_out, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x = None

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.dw, "b": self.db}

    def forward(self, x, training=False):
        if x.shape[1] != self.d_in:
            raise ValueError(f"{self.name}: expected {self.d_in} features, got {x.shape[1]}")
        self._x = x
        return x @ self.w + self.b

    def backward(self, grad_out):
        self.dw[...] = self._x.T @ grad_out
        self.db[...] = grad_out.sum(axis=0)
        return grad_out @ self.w.T


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by max subtraction (shift invariant)."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray
                          ) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy over a batch of integer labels.

    Returns (loss, probs, dloss/dlogits). The gradient is
    (probs - onehot) / batch_size.
    """
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels out of range for {k} classes")
    probs = softmax(logits)
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, np.finfo(np.float64).tiny)).mean())
    grad = probs.astype(logits.dtype).copy()
    grad[np.arange(n), labels] -= 1
    grad /= n
    return loss, probs, grad


def sgd_step(param: np.ndarray, grad: np.ndarray, lr: float, momentum: float,
             velocity: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One SGD-with-momentum update: v' = momentum*v - lr*g; p' = p + v'."""
    v = momentum * velocity - lr * grad
    return param + v, v


class SGD:
    """Momentum SGD over a name->array parameter dict (updates in place)."""

    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for key, p in params.items():
            v = self.velocity.get(key)
            if v is None:
                v = np.zeros_like(p)
            new_p, new_v = sgd_step(p, grads[key], self.lr, self.momentum, v)
            p[...] = new_p.astype(p.dtype)
            self.velocity[key] = new_v.astype(p.dtype)


def finite_diff_check(layer: Layer, x: np.ndarray, eps: float = 1e-5,
                      training: bool = True, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    The scalar objective is sum(forward(x) * R) for a fixed random R; the
    check perturbs every element of the input and of every parameter. Use
    float64 tensors. Relative error is |a - n| / max(|a| + |n|, 1e-6); the
    floor keeps exactly-zero gradient pairs from reading as failures.
    """
    rng = np.random.default_rng(seed)
    out = layer.forward(x, training=training)
    r = rng.standard_normal(out.shape).astype(x.dtype)
    dx = layer.backward(r)
    analytic = {"__input__": np.array(dx, dtype=np.float64)}
    for k, g in layer.grads().items():
        analytic[k] = np.array(g, dtype=np.float64)
    tensors = {"__input__": x}
    tensors.update(layer.params())

    worst = 0.0
    for name, t in tensors.items():
        flat = t.reshape(-1)
        numeric = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(np.sum(layer.forward(x, training=training) * r))
            flat[i] = orig - eps
            f_minus = float(np.sum(layer.forward(x, training=training) * r))
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2 * eps)
        a = analytic[name].reshape(-1)
        err = np.abs(a - numeric) / np.maximum(np.abs(a) + np.abs(numeric), 1e-6)
        worst = max(worst, float(err.max()))
    return worst
