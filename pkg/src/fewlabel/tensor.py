"""Reverse-mode autodiff over float64 numpy arrays.

Small by design: 2-D (and scalar) tensors, the dozen ops the training
losses need, and a central-difference gradient checker. Every op checks
its output for NaN/Inf and raises NumericError so bad numerics surface
at the op that produced them instead of corrupting a training run.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, NumericError, ShapeError


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _finite(a: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite value produced by {op}")
    return a


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """A numpy array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _finite(_arr(data), "tensor")
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Cut the graph: same values, no gradient flows back through this."""
        return Tensor(self.data)

    def backward(self):
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar; scalars are plain python floats, not tensors
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0) if isinstance(other, Tensor) else -other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor/tensor division not supported; use mul with a reciprocal")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = _finite(_arr(data), op)
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        b = Tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    def backward(g):
        _accum(a, g * s)

    return _make(a.data * s, (a,), backward, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes {a.data.shape} x {b.data.shape}")

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, g.T)

    return _make(a.data.T.copy(), (a,), backward, "transpose")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), backward, "relu")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        _accum(a, g * out_data)

    return _make(out_data, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log of a non-positive value")

    def backward(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), backward, "log")


def maximum(a: Tensor, floor: float) -> Tensor:
    """Elementwise max with a constant floor.

    At an exact tie the floor branch wins, so the gradient there is zero;
    this keeps the subgradient choice deterministic.
    """
    pass_through = a.data > floor

    def backward(g):
        _accum(a, g * pass_through)

    return _make(np.maximum(a.data, floor), (a,), backward, "maximum")


def tsum(a: Tensor, axis=None) -> Tensor:
    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _make(a.data.sum(axis=axis), (a,), backward, "sum")


def tmean(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape).copy())

    return _make(a.data.mean(), (a,), backward, "mean")


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Normalize each row to unit Euclidean norm."""
    if a.data.ndim != 2:
        raise ShapeError("l2_normalize_rows expects a 2-D tensor")
    norms = np.sqrt((a.data ** 2).sum(axis=1, keepdims=True))
    if np.any(norms == 0.0):
        raise DomainError("cannot normalize a zero row")
    out_data = a.data / norms

    def backward(g):
        dot = (g * out_data).sum(axis=1, keepdims=True)
        _accum(a, (g - out_data * dot) / norms)

    return _make(out_data, (a,), backward, "l2_normalize_rows")


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Unit vector in the direction of v. Plain numpy, no graph."""
    v = _arr(v)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise DomainError("cannot normalize the zero vector")
    return v / norm


def cosine_sim(u, v) -> float:
    """Cosine similarity of two vectors, clipped to [-1, 1]."""
    u = l2_normalize(u)
    v = l2_normalize(v)
    return float(np.clip(np.dot(u, v), -1.0, 1.0))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array (no graph)."""
    z = _arr(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels, weights=None) -> Tensor:
    """Weighted softmax cross-entropy, differentiable w.r.t. logits.

    labels: int array of shape (n,), each in [0, K).
    weights: per-row multipliers; default 1/n gives the batch mean.
    A zero weight removes the row from both the loss and the gradient,
    which is how the confidence-masked unlabeled losses are built.
    """
    if logits.data.ndim != 2:
        raise ShapeError("softmax_cross_entropy expects (n, K) logits")
    n, k = logits.data.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise IndexError(f"label out of range [0, {k})")
    if weights is None:
        w = np.full(n, 1.0 / n) if n else np.zeros(0)
    else:
        w = _arr(weights)
        if w.shape != (n,):
            raise ShapeError("weights must be one value per row")

    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    ce = lse - z[np.arange(n), labels]
    loss_val = float((w * ce).sum()) if n else 0.0

    def backward(g):
        probs = softmax(z)
        probs[np.arange(n), labels] -= 1.0
        _accum(logits, g * probs * w[:, None])

    return _make(loss_val, (logits,), backward, "softmax_cross_entropy")


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy on raw logits (numerically stable)."""
    y = _arr(targets)
    if y.shape != logits.data.shape:
        raise ShapeError("bce targets must match logits shape")
    z = logits.data
    ce = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def backward(g):
        sig = 1.0 / (1.0 + np.exp(-z))
        _accum(logits, g * (sig - y) / n)

    return _make(ce.mean(), (logits,), backward, "bce_with_logits")


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Plain-array logistic function (no graph)."""
    z = _arr(z)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def grad_check(loss_fn, params, eps: float = 1e-5, coords_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_fn must be deterministic given the current parameter values and
    return a scalar Tensor. params is an iterable of (name, Tensor) pairs
    (or anything with .items()). When coords_per_param is set, that many
    coordinates per parameter are sampled instead of sweeping all of them.
    """
    items = list(params.items() if hasattr(params, "items") else params)
    for _, p in items:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in items
    }
    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for name, p in items:
        flat = p.data.reshape(-1)
        size = flat.size
        if coords_per_param is None or size <= coords_per_param:
            coords = range(size)
        else:
            coords = rng.choice(size, size=coords_per_param, replace=False)
        ga_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn().item()
            flat[i] = orig - eps
            lo = loss_fn().item()
            flat[i] = orig
            fd = (hi - lo) / (2.0 * eps)
            err = abs(ga_flat[i] - fd) / max(1.0, abs(ga_flat[i]), abs(fd))
            worst = max(worst, err)
    return worst
