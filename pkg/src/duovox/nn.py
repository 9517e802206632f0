"""Minimal trainable-layer engine on numpy.

A deliberately small, fixed set of blocks (embedding, linear, 1-D
convolution, layer norm, ReLU, mean pooling, statistics pooling, softmax)
with hand-written reverse-mode gradients, an Adam optimizer, and a central
finite-difference checker.  Sequences are single 2-D arrays (time x
channels); batching is a loop over samples with gradient accumulation.

Every forward/backward output passes a finite-value guard; a NaN or Inf
raises NumericError naming the block.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError

FINITE_CHECKS = True


def _guard(name: str, arr: np.ndarray) -> np.ndarray:
    if FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")
    return arr


class Param:
    """A named tensor with an accumulated gradient of the same shape."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)


class Block:
    """Base layer: forward caches what backward needs."""

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _need_cache(self, cache, what: str):
        if cache is None:
            raise RuntimeError(f"{type(self).__name__}: backward called before forward ({what})")
        return cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)


class Embedding(Block):
    """Row lookup: int ids -> (len, dim)."""

    def __init__(self, n_rows: int, dim: int, rng: np.random.Generator, name: str = "emb",
                 scale: float = 0.1):
        self.n_rows = n_rows
        self.weight = Param(f"{name}.weight", rng.uniform(-scale, scale, size=(n_rows, dim)))
        self._ids = None

    def params(self):
        return [self.weight]

    def forward(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_rows):
            raise ValueError(f"{self.weight.name}: id out of range [0, {self.n_rows})")
        self._ids = ids
        return _guard(self.weight.name, self.weight.value[ids])

    def backward(self, dy):
        ids = self._need_cache(self._ids, "ids")
        np.add.at(self.weight.grad, ids, dy)
        return np.zeros(ids.shape)  # ids carry no gradient


class Linear(Block):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, name: str = "linear"):
        bound = 1.0 / np.sqrt(d_in)
        self.weight = Param(f"{name}.weight", rng.uniform(-bound, bound, size=(d_in, d_out)))
        self.bias = Param(f"{name}.bias", np.zeros(d_out))
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        self._x = np.asarray(x, dtype=np.float64)
        if self._x.shape[-1] != self.weight.value.shape[0]:
            raise ValueError(f"{self.weight.name}: expected last dim "
                             f"{self.weight.value.shape[0]}, got {self._x.shape[-1]}")
        return _guard(self.weight.name, self._x @ self.weight.value + self.bias.value)

    def backward(self, dy):
        x = self._need_cache(self._x, "input")
        dy = np.asarray(dy, dtype=np.float64)
        self.weight.grad += x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
        self.bias.grad += dy.reshape(-1, dy.shape[-1]).sum(axis=0)
        return _guard(self.weight.name + ".dx", dy @ self.weight.value.T)


class Conv1d(Block):
    """Same-padded 1-D convolution over (time, channels), via im2col."""

    def __init__(self, d_in: int, d_out: int, kernel: int, rng: np.random.Generator,
                 name: str = "conv"):
        if kernel % 2 == 0:
            raise ValueError("kernel size must be odd for same padding")
        self.d_in, self.d_out, self.kernel = d_in, d_out, kernel
        bound = 1.0 / np.sqrt(d_in * kernel)
        self.weight = Param(f"{name}.weight",
                            rng.uniform(-bound, bound, size=(kernel * d_in, d_out)))
        self.bias = Param(f"{name}.bias", np.zeros(d_out))
        self._cols = None
        self._t = 0

    def params(self):
        return [self.weight, self.bias]

    def _im2col(self, x):
        t = x.shape[0]
        half = self.kernel // 2
        padded = np.pad(x, ((half, half), (0, 0)))
        cols = np.empty((t, self.kernel * self.d_in))
        for tap in range(self.kernel):
            cols[:, tap * self.d_in:(tap + 1) * self.d_in] = padded[tap:tap + t]
        return cols

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ValueError(f"{self.weight.name}: expected (T, {self.d_in}), got {x.shape}")
        self._t = x.shape[0]
        self._cols = self._im2col(x)
        return _guard(self.weight.name, self._cols @ self.weight.value + self.bias.value)

    def backward(self, dy):
        cols = self._need_cache(self._cols, "im2col")
        dy = np.asarray(dy, dtype=np.float64)
        self.weight.grad += cols.T @ dy
        self.bias.grad += dy.sum(axis=0)
        dcols = dy @ self.weight.value.T
        half = self.kernel // 2
        dx_padded = np.zeros((self._t + 2 * half, self.d_in))
        for tap in range(self.kernel):
            dx_padded[tap:tap + self._t] += dcols[:, tap * self.d_in:(tap + 1) * self.d_in]
        return _guard(self.weight.name + ".dx", dx_padded[half:half + self._t])


class LayerNorm(Block):
    """Normalization over the channel axis, per time step."""

    EPS = 1e-5

    def __init__(self, dim: int, name: str = "ln"):
        self.gain = Param(f"{name}.gain", np.ones(dim))
        self.bias = Param(f"{name}.bias", np.zeros(dim))
        self._cache = None

    def params(self):
        return [self.gain, self.bias]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.EPS)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv)
        return _guard(self.gain.name, xhat * self.gain.value + self.bias.value)

    def backward(self, dy):
        xhat, inv = self._need_cache(self._cache, "stats")
        dy = np.asarray(dy, dtype=np.float64)
        self.gain.grad += (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
        self.bias.grad += dy.reshape(-1, dy.shape[-1]).sum(axis=0)
        dxhat = dy * self.gain.value
        n = xhat.shape[-1]
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return _guard(self.gain.name + ".dx", dx)


class ReLU(Block):
    def __init__(self):
        self._mask = None

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        mask = self._need_cache(self._mask, "mask")
        return dy * mask


class MeanPool(Block):
    """Mean over time: (T, C) -> (C,)."""

    def __init__(self):
        self._t = None

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._t = x.shape[0]
        return x.mean(axis=0)

    def backward(self, dy):
        t = self._need_cache(self._t, "length")
        return np.tile(dy / t, (t, 1))


class StatsPool(Block):
    """Temporal statistics pooling: (T, C) -> (2C,) of [mean, std]."""

    EPS = 1e-8

    def __init__(self):
        self._cache = None

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        mu = x.mean(axis=0)
        centered = x - mu
        std = np.sqrt(np.mean(centered * centered, axis=0) + self.EPS)
        self._cache = (centered, std, x.shape[0])
        return _guard("stats_pool", np.concatenate([mu, std]))

    def backward(self, dy):
        centered, std, t = self._need_cache(self._cache, "stats")
        c = centered.shape[1]
        dmu, dstd = dy[:c], dy[c:]
        dx = np.tile(dmu / t, (t, 1)) + dstd * centered / (t * std)
        return _guard("stats_pool.dx", dx)


class Softmax(Block):
    """Row-wise softmax with a stable log-sum-exp path."""

    def __init__(self):
        self._y = None

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        self._y = e / e.sum(axis=-1, keepdims=True)
        return _guard("softmax", self._y)

    def backward(self, dy):
        y = self._need_cache(self._y, "probs")
        dot = (dy * y).sum(axis=-1, keepdims=True)
        return _guard("softmax.dx", y * (dy - dot))


class Sequential(Block):
    def __init__(self, blocks: list[Block]):
        self.blocks = blocks

    def params(self):
        out = []
        for b in self.blocks:
            out.extend(b.params())
        return out

    def forward(self, x):
        for b in self.blocks:
            x = b.forward(x)
        return x

    def backward(self, dy):
        for b in reversed(self.blocks):
            dy = b.backward(dy)
        return dy


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, targets) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over rows; returns (loss, dloss/dlogits).

    Accepts a single logit vector with an int target, or (N, C) with N
    targets.
    """
    logits = np.asarray(logits, dtype=np.float64)
    squeeze = logits.ndim == 1
    rows = logits[None, :] if squeeze else logits
    tgt = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    n, c = rows.shape
    if tgt.shape != (n,):
        raise ValueError(f"expected {n} targets, got shape {tgt.shape}")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= c):
        raise ValueError(f"target class out of range [0, {c})")
    logp = log_softmax(rows)
    loss = float(-logp[np.arange(n), tgt].mean())
    grad = np.exp(logp)
    grad[np.arange(n), tgt] -= 1.0
    grad /= n
    _guard("cross_entropy", grad)
    return loss, grad[0] if squeeze else grad


def mse(pred: np.ndarray, target: np.ndarray,
        mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Masked mean squared error; returns (loss, dloss/dpred)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    if mask is None:
        mask = np.ones_like(pred)
    else:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != pred.shape:
            raise ValueError(f"mask shape {mask.shape} != pred shape {pred.shape}")
    denom = max(float(mask.sum()), 1.0)
    diff = (pred - target) * mask
    loss = float((diff * diff).sum() / denom)
    grad = 2.0 * diff / denom
    return loss, grad


class Adam:
    """Adam with bias correction; the only mutation path for parameters."""

    def __init__(self, params: list[Param], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.value) for p in params]
        self._v = [np.zeros_like(p.value) for p in params]

    def zero_grad(self):
        for p in self.params:
            p.grad[...] = 0.0

    def step(self):
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            _guard(p.name + ".grad", p.grad)
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.value -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def state(self) -> dict:
        return {
            "step": self.step_count,
            "m": [m.copy() for m in self._m],
            "v": [v.copy() for v in self._v],
        }

    def load_state(self, state: dict):
        self.step_count = int(state["step"])
        for m, saved in zip(self._m, state["m"]):
            m[...] = saved
        for v, saved in zip(self._v, state["v"]):
            v[...] = saved


def finite_difference(fun, x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fun(x)
        flat[i] = orig - eps
        lo = fun(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))
