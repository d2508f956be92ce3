"""Minimal dense-tensor autodiff kernel.

Just the ops the search-time model needs: 3x3 same-padding convolution,
2x2 max pooling, batch norm, dense layers, the usual activations, dropout,
the two task losses, and Adam. Everything is numpy underneath; float32 by
default with a float64 mode for gradient checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an op's contract."""


class Tensor:
    """A numpy array with reverse-mode gradient tracking.

    Gradients accumulate additively when a value is reused. The graph is a
    DAG of parent links built by the op functions below.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- graph traversal -------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)


def _as_tensor(x, dtype=np.float32):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad and t._backward is None and not t._parents:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g


def _needs_grad(*tensors):
    return any(t.requires_grad or t._parents for t in tensors)


def _unbroadcast(g: np.ndarray, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# -- elementwise / structural ops -----------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data, requires_grad=_needs_grad(a, b), parents=(a, b))

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    out._backward = backward
    return out


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data, requires_grad=_needs_grad(a, b), parents=(a, b))

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    out._backward = backward
    return out


def scale(a, c: float):
    a = _as_tensor(a)
    out = Tensor(a.data * c, requires_grad=_needs_grad(a), parents=(a,))
    out._backward = lambda g: _accum(a, g * c)
    return out


def pow_const(a, p: float):
    a = _as_tensor(a)
    out = Tensor(a.data**p, requires_grad=_needs_grad(a), parents=(a,))
    out._backward = lambda g: _accum(a, g * p * a.data ** (p - 1))
    return out


def tensor_sum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), requires_grad=_needs_grad(a), parents=(a,))

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    out._backward = backward
    return out


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape), requires_grad=_needs_grad(a), parents=(a,))
    out._backward = lambda g: _accum(a, g.reshape(a.data.shape))
    return out


def flatten(a):
    """Flatten everything after an optional leading batch axis."""
    a = _as_tensor(a)
    if a.data.ndim <= 1:
        return reshape(a, (-1,))
    return reshape(a, (a.data.shape[0], -1))


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        requires_grad=_needs_grad(*tensors),
        parents=tuple(tensors),
    )
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    out._backward = backward
    return out


# -- activations ------------------------------------------------------------


def relu(a):
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0), requires_grad=_needs_grad(a), parents=(a,))
    out._backward = lambda g: _accum(a, g * (a.data > 0))
    return out


def tanh(a):
    a = _as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y, requires_grad=_needs_grad(a), parents=(a,))
    out._backward = lambda g: _accum(a, g * (1 - y * y))
    return out


def softmax(a):
    """Softmax over the last axis."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, requires_grad=_needs_grad(a), parents=(a,))

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accum(a, y * (g - dot))

    out._backward = backward
    return out


def activation(kind: str, a):
    if kind == "relu":
        return relu(a)
    if kind == "tanh":
        return tanh(a)
    if kind == "softmax":
        return softmax(a)
    raise ValueError(f"unknown activation kind: {kind!r}")


# -- layers -------------------------------------------------------------------


def dense(x, W, b):
    """y = x @ W.T + b with W of shape (m, n)."""
    x, W, b = _as_tensor(x), _as_tensor(W), _as_tensor(b)
    if x.data.shape[-1] != W.data.shape[1]:
        raise ShapeError(f"dense: input width {x.data.shape[-1]} != weight columns {W.data.shape[1]}")
    if b.data.shape != (W.data.shape[0],):
        raise ShapeError(f"dense: bias shape {b.data.shape} != ({W.data.shape[0]},)")
    out = Tensor(x.data @ W.data.T + b.data, requires_grad=_needs_grad(x, W, b), parents=(x, W, b))

    def backward(g):
        _accum(x, g @ W.data)
        if x.data.ndim == 1:
            _accum(W, np.outer(g, x.data))
            _accum(b, g)
        else:
            x2 = x.data.reshape(-1, x.data.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            _accum(W, g2.T @ x2)
            _accum(b, g2.sum(axis=0))

    out._backward = backward
    return out


def conv2d(x, kernel, bias):
    """3x3 same-padding, stride-1 convolution in HWC layout.

    Accepts (H, W, Cin) or a batched (N, H, W, Cin); kernel is
    (3, 3, Cin, Cout) and bias (Cout,).
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d: expected 3D or 4D input, got shape {x.data.shape}")
    n, h, w, cin = xd.shape
    kh, kw, kcin, cout = kernel.data.shape
    if (kh, kw) != (3, 3):
        raise ShapeError(f"conv2d: kernel spatial size must be 3x3, got {kh}x{kw}")
    if kcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels but kernel expects {kcin} (input {x.data.shape}, kernel {kernel.data.shape})")
    if h < 1 or w < 1:
        raise ShapeError(f"conv2d: empty spatial size {h}x{w}")
    if bias.data.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.data.shape} != ({cout},)")

    xp = np.pad(xd, ((0, 0), (1, 1), (1, 1), (0, 0)))
    # (N, H, W, Cin, 3, 3) -> (N, H, W, 3, 3, Cin), matching kernel layout
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))
    patches = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n, h, w, 9 * cin)
    kmat = kernel.data.reshape(9 * cin, cout)
    y = patches @ kmat + bias.data
    if squeeze:
        y = y[0]
    out = Tensor(y, requires_grad=_needs_grad(x, kernel, bias), parents=(x, kernel, bias))

    def backward(g):
        gd = g[None] if squeeze else g
        g2 = gd.reshape(-1, cout)
        _accum(kernel, (patches.reshape(-1, 9 * cin).T @ g2).reshape(3, 3, cin, cout))
        _accum(bias, g2.sum(axis=0))
        dpatch = (gd @ kmat.T).reshape(n, h, w, 3, 3, cin)
        dxp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                dxp[:, i : i + h, j : j + w, :] += dpatch[:, :, :, i, j, :]
        dx = dxp[:, 1 : h + 1, 1 : w + 1, :]
        _accum(x, dx[0] if squeeze else dx)

    out._backward = backward
    return out


def maxpool2(x):
    """2x2 max pooling, stride 2; gradient routes to the first max in row-major window order."""
    x = _as_tensor(x)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    n, h, w, c = xd.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: spatial size {h}x{w} must be even")
    h2, w2 = h // 2, w // 2
    # (N, h2, w2, 4, C) with window cells in row-major order
    windows = xd.reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, h2, w2, 4, c)
    arg = windows.argmax(axis=3)
    y = np.take_along_axis(windows, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    if squeeze:
        y = y[0]
    out = Tensor(y, requires_grad=_needs_grad(x), parents=(x,))

    def backward(g):
        gd = g[None] if squeeze else g
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, arg[:, :, :, None, :], gd[:, :, :, None, :], axis=3)
        dx = dwin.reshape(n, h2, w2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, h, w, c)
        _accum(x, dx[0] if squeeze else dx)

    out._backward = backward
    return out


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=np.float64):
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batchnorm(x, gamma, beta, state: BatchNormState, mode: str = "train"):
    """Per-channel batch normalization over batch and spatial axes.

    A train-mode batch of size 1 falls back to running statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown batchnorm mode: {mode!r}")
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    n, h, w, c = xd.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"batchnorm: gamma/beta shapes {gamma.data.shape}/{beta.data.shape} != ({c},)")

    use_batch_stats = mode == "train" and n >= 2
    axes = (0, 1, 2)
    if use_batch_stats:
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        m = state.momentum
        state.running_mean = m * state.running_mean + (1 - m) * mu
        state.running_var = m * state.running_var + (1 - m) * var
    else:
        mu = state.running_mean.astype(xd.dtype)
        var = state.running_var.astype(xd.dtype)

    ivar = 1.0 / np.sqrt(var + state.eps)
    xhat = (xd - mu) * ivar
    y = gamma.data * xhat + beta.data
    if squeeze:
        y = y[0]
    out = Tensor(y, requires_grad=_needs_grad(x, gamma, beta), parents=(x, gamma, beta))

    def backward(g):
        gd = g[None] if squeeze else g
        _accum(gamma, (gd * xhat).sum(axis=axes))
        _accum(beta, gd.sum(axis=axes))
        dxhat = gd * gamma.data
        if use_batch_stats:
            m_count = n * h * w
            dvar = (dxhat * (xd - mu)).sum(axis=axes) * -0.5 * ivar**3
            dmu = -(dxhat.sum(axis=axes)) * ivar + dvar * (-2.0 / m_count) * (xd - mu).sum(axis=axes)
            dx = dxhat * ivar + dvar * 2.0 * (xd - mu) / m_count + dmu / m_count
        else:
            dx = dxhat * ivar
        _accum(x, dx[0] if squeeze else dx)

    out._backward = backward
    return out


def dropout(x, rate: float, mode: str = "train", rng: np.random.Generator | None = None):
    """Inverted dropout; exact identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = _as_tensor(x)
    if mode == "eval" or rate == 0.0:
        out = Tensor(x.data, requires_grad=_needs_grad(x), parents=(x,))
        out._backward = lambda g: _accum(x, g)
        return out
    if rng is None:
        raise ValueError("train-mode dropout requires an rng for determinism")
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    out = Tensor(x.data * keep, requires_grad=_needs_grad(x), parents=(x,))
    out._backward = lambda g: _accum(x, g * keep)
    return out


def embedding(table, ids):
    """Differentiable row lookup; gradient accumulates into the selected rows only."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(f"embedding ids out of range 0..{table.data.shape[0] - 1}: {ids}")
    out = Tensor(table.data[ids], requires_grad=_needs_grad(table), parents=(table,))

    def backward(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids, g)
        _accum(table, dt)

    out._backward = backward
    return out


# -- losses ----------------------------------------------------------------


def mse(pred, target):
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse: shapes differ {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    out = Tensor(np.asarray((diff * diff).mean(), dtype=pred.data.dtype), requires_grad=_needs_grad(pred, target), parents=(pred, target))

    def backward(g):
        d = g * 2.0 * diff / diff.size
        _accum(pred, d)
        _accum(target, -d)

    out._backward = backward
    return out


PROB_CLAMP = 1e-12


def cross_entropy(probs, labels):
    """Mean negative log-likelihood of integer labels in 0..4 under given probabilities."""
    probs = _as_tensor(probs)
    labels = np.atleast_1d(np.asarray(labels))
    n_classes = probs.data.shape[-1]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must be in 0..{n_classes - 1}, got {labels}")
    p2 = probs.data.reshape(-1, n_classes)
    if p2.shape[0] != labels.shape[0]:
        raise ShapeError(f"cross_entropy: {p2.shape[0]} rows vs {labels.shape[0]} labels")
    picked = np.clip(p2[np.arange(len(labels)), labels], PROB_CLAMP, None)
    out = Tensor(np.asarray(-np.log(picked).mean(), dtype=probs.data.dtype), requires_grad=_needs_grad(probs), parents=(probs,))

    def backward(g):
        dp = np.zeros_like(p2)
        dp[np.arange(len(labels)), labels] = -g / (picked * len(labels))
        _accum(probs, dp.reshape(probs.data.shape))

    out._backward = backward
    return out


def l2_penalty(params, lam: float):
    """lam * sum of squared entries over an iterable of tensors."""
    total = None
    for p in params:
        term = tensor_sum(mul(p, p))
        total = term if total is None else add(total, term)
    if total is None:
        return Tensor(np.float32(0.0))
    return scale(total, lam)


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter Adam moment buffers keyed by parameter name."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, state: AdamState, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, in place on params."""
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        if state.m[name].shape != p.data.shape:
            raise ShapeError(f"adam_step: state shape {state.m[name].shape} != param {name!r} shape {p.data.shape}")
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * (g * g)
        mhat = state.m[name] / (1 - beta1**t)
        vhat = state.v[name] / (1 - beta2**t)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)


# -- gradient checking ---------------------------------------------------------


def grad_check(builder, inputs: dict, n_samples: int = 100, eps: float = 1e-6, seed: int = 0):
    """Compare analytic gradients against central finite differences.

    ``builder`` maps a dict of float64 Tensors (same keys as ``inputs``) to a
    scalar Tensor. Returns a dict with the max relative error per input and
    overall, where relative error is |a - n| / max(|a|, |n|, 1e-8).
    """
    rng = np.random.default_rng(seed)
    tensors = {k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True) for k, v in inputs.items()}
    loss = builder(tensors)
    loss.backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}

    per_input = {}
    for k, t in tensors.items():
        flat = t.data.reshape(-1)
        n_coords = min(n_samples, flat.size)
        coords = rng.choice(flat.size, size=n_coords, replace=False)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            f_plus = float(builder(tensors).data)
            flat[c] = orig - eps
            f_minus = float(builder(tensors).data)
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2 * eps)
            a = float(analytic[k].reshape(-1)[c])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
        per_input[k] = worst
    return {"per_input": per_input, "max_rel_error": max(per_input.values()) if per_input else 0.0}
