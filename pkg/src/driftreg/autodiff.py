"""Minimal reverse-mode automatic differentiation over dense matrices.

Everything is a 2-D array.  Ops build a graph of Tensor nodes; backward()
walks it in reverse topological order and accumulates (never overwrites)
gradients, so parameters shared between branches - the siamese encoder -
collect contributions from every use.  Conventions that matter for
reproducibility: relu's subgradient at 0 is 0, and row-max ties route the
gradient to the lowest row index.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import (
    BatchTooSmall,
    NonScalarLoss,
    ShapeMismatch,
    TapeConsumed,
)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference / numeric probes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, values, requires_grad=False, _parents=(), _backward_fn=None):
        values = np.asarray(values)
        if values.ndim == 0:
            values = values.reshape(1, 1)
        if values.ndim != 2:
            raise ShapeMismatch(f"tensors are 2-D matrices, got shape {values.shape}")
        self.values = values
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward_fn = _backward_fn
        self._consumed = False

    @property
    def shape(self):
        return self.values.shape

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self._backward_fn is not None

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeMismatch(f"item() on shape {self.values.shape}")
        return float(self.values[0, 0])

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g.astype(self.values.dtype, copy=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate grads of every tracked tensor reachable from this scalar."""
        if self.values.shape != (1, 1):
            raise NonScalarLoss(f"backward() needs a 1x1 tensor, got {self.values.shape}")
        if self._consumed:
            raise TapeConsumed("backward() already ran on this graph")
        topo: list[Tensor] = []
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
            for parent in node._parents:
                if parent.tracked and id(parent) not in seen:
                    stack.append((parent, False))
        self.accumulate(np.ones_like(self.values))
        for node in reversed(topo):
            node._consumed = True
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.values.shape}, dtype={self.values.dtype}{flag})"


def _node(values, parents, backward_fn):
    if _grad_enabled and any(p.tracked for p in parents):
        return Tensor(values, _parents=tuple(parents), _backward_fn=backward_fn)
    return Tensor(values)


# -- primitive ops -------------------------------------------------------------

def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Row-wise x @ w + b with b of shape (1, q)."""
    n, p = x.shape
    if w.shape[0] != p:
        raise ShapeMismatch(f"affine: x {x.shape} vs w {w.shape}")
    if b.shape != (1, w.shape[1]):
        raise ShapeMismatch(f"affine: b must be (1, {w.shape[1]}), got {b.shape}")
    out = x.values @ w.values + b.values

    def backward_fn(g):
        if x.tracked:
            x.accumulate(g @ w.values.T)
        if w.tracked:
            w.accumulate(x.values.T @ g)
        if b.tracked:
            b.accumulate(g.sum(axis=0, keepdims=True))

    return _node(out, (x, w, b), backward_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0  # subgradient at exactly 0 is 0
    out = np.where(mask, x.values, 0)

    def backward_fn(g):
        x.accumulate(g * mask)

    return _node(out, (x,), backward_fn)


def softplus(x: Tensor) -> Tensor:
    v = x.values
    out = np.log1p(np.exp(-np.abs(v))) + np.maximum(v, 0)

    def backward_fn(g):
        sig = np.where(v >= 0, 1.0 / (1.0 + np.exp(-v)), np.exp(v) / (1.0 + np.exp(v)))
        x.accumulate(g * sig)

    return _node(out, (x,), backward_fn)


def maxpool_rows(x: Tensor) -> Tensor:
    """Column-wise max over rows -> (1, q); ties take the lowest row index."""
    arg = x.values.argmax(axis=0)  # argmax returns the first maximal row
    cols = np.arange(x.shape[1])
    out = x.values[arg, cols][None, :]

    def backward_fn(g):
        gx = np.zeros_like(x.values)
        gx[arg, cols] = g[0]
        x.accumulate(gx)

    return _node(out, (x,), backward_fn)


def concat_cols(*xs: Tensor) -> Tensor:
    n = xs[0].shape[0]
    if any(x.shape[0] != n for x in xs):
        raise ShapeMismatch(f"concat_cols: row counts differ: {[x.shape for x in xs]}")
    out = np.concatenate([x.values for x in xs], axis=1)
    offsets = np.cumsum([0] + [x.shape[1] for x in xs])

    def backward_fn(g):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if x.tracked:
                x.accumulate(g[:, lo:hi])

    return _node(out, xs, backward_fn)


def tile_row(v: Tensor, n: int) -> Tensor:
    """Duplicate a (1, q) row n times; backward sums over the copies."""
    if v.shape[0] != 1:
        raise ShapeMismatch(f"tile_row expects (1, q), got {v.shape}")
    out = np.broadcast_to(v.values, (n, v.shape[1])).copy()

    def backward_fn(g):
        v.accumulate(g.sum(axis=0, keepdims=True))

    return _node(out, (v,), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
    out = a.values + b.values

    def backward_fn(g):
        if a.tracked:
            a.accumulate(g)
        if b.tracked:
            b.accumulate(g)

    return _node(out, (a, b), backward_fn)


def scale(x: Tensor, s: float) -> Tensor:
    out = x.values * s

    def backward_fn(g):
        x.accumulate(g * s)

    return _node(out, (x,), backward_fn)


def sum_all(x: Tensor) -> Tensor:
    out = np.array([[x.values.sum(dtype=np.float64)]])

    def backward_fn(g):
        x.accumulate(np.full_like(x.values, float(g[0, 0])))

    return _node(out, (x,), backward_fn)


# -- batch normalization --------------------------------------------------------

class BatchNorm:
    """Per-column normalization with learned scale/shift and running stats.

    Train mode normalizes by the batch's own (biased) mean/variance and
    folds them into the running statistics with momentum 0.1; eval mode is
    a fixed per-column affine map from the running statistics.
    """

    EPS = 1e-5
    MOMENTUM = 0.1

    def __init__(self, width: int, dtype=np.float32):
        self.gamma = Tensor(np.ones((1, width), dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros((1, width), dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros((1, width), dtype=dtype)
        self.running_var = np.ones((1, width), dtype=dtype)

    @property
    def width(self) -> int:
        return self.gamma.shape[1]

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        if x.shape[1] != self.width:
            raise ShapeMismatch(f"batchnorm width {self.width} vs input {x.shape}")
        if mode == "train":
            return self._train(x)
        if mode == "eval":
            return self._eval(x)
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    def _train(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        if n < 2:
            raise BatchTooSmall("batch normalization needs n >= 2 rows in train mode")
        mu = x.values.mean(axis=0, keepdims=True)
        centered = x.values - mu
        var = (centered * centered).mean(axis=0, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.EPS)
        xhat = centered * inv
        out = self.gamma.values * xhat + self.beta.values
        m = self.MOMENTUM
        self.running_mean = ((1 - m) * self.running_mean + m * mu).astype(
            self.running_mean.dtype
        )
        self.running_var = ((1 - m) * self.running_var + m * var).astype(
            self.running_var.dtype
        )
        gamma, beta = self.gamma, self.beta

        def backward_fn(g):
            if gamma.tracked:
                gamma.accumulate((g * xhat).sum(axis=0, keepdims=True))
            if beta.tracked:
                beta.accumulate(g.sum(axis=0, keepdims=True))
            if x.tracked:
                gxhat = g * gamma.values
                gvar = (gxhat * centered).sum(axis=0, keepdims=True) * (-0.5) * inv**3
                gmu = -gxhat.sum(axis=0, keepdims=True) * inv + gvar * (
                    -2.0 / n
                ) * centered.sum(axis=0, keepdims=True)
                x.accumulate(gxhat * inv + gvar * (2.0 / n) * centered + gmu / n)

        return _node(out, (x, gamma, beta), backward_fn)

    def _eval(self, x: Tensor) -> Tensor:
        inv = 1.0 / np.sqrt(self.running_var + self.EPS)
        xhat = (x.values - self.running_mean) * inv
        out = self.gamma.values * xhat + self.beta.values
        gamma, beta = self.gamma, self.beta

        def backward_fn(g):
            if gamma.tracked:
                gamma.accumulate((g * xhat).sum(axis=0, keepdims=True))
            if beta.tracked:
                beta.accumulate(g.sum(axis=0, keepdims=True))
            if x.tracked:
                x.accumulate(g * gamma.values * inv)

        return _node(out, (x, gamma, beta), backward_fn)

    def eval_scale(self) -> np.ndarray:
        """Per-channel |gamma| / sqrt(running_var + eps) of the eval-mode map."""
        return np.abs(self.gamma.values) / np.sqrt(self.running_var + self.EPS)


# -- optimizer -------------------------------------------------------------------

class Adam:
    """Adam with bias correction; the trainer passes base_lr * decay^epoch."""

    def __init__(self, params, base_lr=1e-4, decay=0.995, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.base_lr = base_lr
        self.decay = decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def effective_lr(self, epoch: int) -> float:
        return self.base_lr * self.decay**epoch

    def step(self, lr: float | None = None) -> None:
        if lr is None:
            lr = self.base_lr
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            if p.values.shape != g.shape:
                raise ShapeMismatch(f"grad shape {g.shape} vs param {p.values.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.values -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# -- finite-difference checking (test entry point) --------------------------------

def gradcheck(fn, wrt, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    fn rebuilds and returns the scalar loss from the current values of the
    tensors in wrt.  Error is max |a - n| / max(1, max|a|, max|n|), taken
    over all entries of all checked tensors.
    """
    for t in wrt:
        t.zero_grad()
    fn().backward()
    analytic = [np.array(t.grad, dtype=np.float64, copy=True) for t in wrt]

    worst = 0.0
    with no_grad():
        for t, ana in zip(wrt, analytic):
            numeric = np.zeros(t.values.shape, dtype=np.float64)
            it = np.nditer(t.values, flags=["multi_index"])
            for _ in it:
                ij = it.multi_index
                orig = t.values[ij]
                t.values[ij] = orig + h
                f_plus = fn().item()
                t.values[ij] = orig - h
                f_minus = fn().item()
                t.values[ij] = orig
                numeric[ij] = (f_plus - f_minus) / (2.0 * h)
            denom = max(1.0, float(np.abs(ana).max()), float(np.abs(numeric).max()))
            worst = max(worst, float(np.abs(ana - numeric).max()) / denom)
    return worst
