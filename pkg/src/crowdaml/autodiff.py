"""Small reverse-mode autodiff over dense float64 numpy arrays.

Only the operations the encoder and losses need are provided.  Every op
returns a new :class:`Tensor` holding its parents and a closure that pushes
the output gradient back to them; :meth:`Tensor.backward` walks the recorded
graph in reverse topological order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import DataError, NumericError

CHECKPOINT_FORMAT = "crowdaml-params"
CHECKPOINT_VERSION = 1


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar, got shape {self.shape}")
        order, seen = [], set()
        stack = [(self, False)]
        # iterative DFS; recursion would overflow on long op chains
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is not None:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    grads[key] = pg if key not in grads else grads[key] + pg


def gradients(loss: "Tensor", params: dict) -> dict[str, np.ndarray]:
    """Backpropagate ``loss``; parameters it does not reach get zeros."""
    for p in params.values():
        p.grad = None
    loss.backward()
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}


def _needs_grad(*ts):
    return any(t.requires_grad for t in ts)


def _make(data, parents, backward):
    track = _needs_grad(*parents)
    return Tensor(data, track, parents if track else (), backward if track else None)


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _shape_error(op, a, b):
    return ValueError(f"{op}: incompatible shapes {tuple(a.shape)} and {tuple(b.shape)}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T if a.requires_grad else None,
                            a.data.T @ g if b.requires_grad else None))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a row vector added to every row."""
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g))
    if a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        return _make(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
    raise _shape_error("add", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equal shapes, or scaling by a one-element tensor."""
    if a.shape == b.shape:
        return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))
    if b.data.size == 1:
        s = b.data.reshape(())
        return _make(a.data * s, (a, b),
                     lambda g: (g * s, np.full(b.shape, np.sum(g * a.data))))
    raise _shape_error("mul", a, b)


def concat(tensors) -> Tensor:
    """Column-wise concatenation of row-aligned matrices (or of vectors)."""
    tensors = list(tensors)
    axis = tensors[0].data.ndim - 1
    rows = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != rows:
            raise _shape_error("concat", tensors[0], t)
    cuts = np.cumsum([t.shape[-1] for t in tensors])[:-1]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(data, tuple(tensors), lambda g: tuple(np.split(g, cuts, axis=axis)))


def columns(a: Tensor, start: int, stop: int) -> Tensor:
    def back(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)
    return _make(a.data[:, start:stop], (a,), back)


def mean(a: Tensor, axis=None) -> Tensor:
    """Mean over all entries, or over rows (``axis=0``) giving one row."""
    if axis is None:
        n = a.data.size
        return _make(np.asarray(a.data.mean()), (a,), lambda g: (np.full(a.shape, g / n),))
    n = a.shape[axis]
    return _make(a.data.mean(axis=axis), (a,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy(),))


def total(a: Tensor) -> Tensor:
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.full(a.shape, g),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax of a matrix."""
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return _make(p, (a,), lambda g: (p * (g - np.sum(g * p, axis=1, keepdims=True)),))


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(a, floor)``; clipped entries get zero gradient."""
    x = np.maximum(a.data, floor) if floor > 0 else a.data
    live = a.data >= floor if floor > 0 else np.ones(a.shape, dtype=bool)
    with np.errstate(divide="ignore"):
        out = np.log(x)
    return _make(out, (a,), lambda g: (np.where(live, g / np.where(live, x, 1.0), 0.0),))


def _selector(index, size, weights=None):
    """Sparse ``size x len(index)`` matrix summing rows into their slots."""
    k = len(index)
    w = np.ones(k) if weights is None else weights
    return sparse.csr_matrix((w, (index, np.arange(k))), shape=(size, k))


def gather(a: Tensor, index) -> Tensor:
    """Rows of ``a`` selected by an integer index (repeats allowed)."""
    index = np.asarray(index, dtype=np.int64)
    return _make(a.data[index], (a,), lambda g: (_selector(index, a.shape[0]) @ g,))


def scatter_mean(a: Tensor, index, size: int) -> Tensor:
    """Average rows of ``a`` into ``size`` slots; empty slots are zero."""
    index = np.asarray(index, dtype=np.int64)
    if len(index) != a.shape[0]:
        raise ValueError(f"scatter_mean: index length {len(index)} vs {a.shape[0]} rows")
    if a.data.ndim != 2:
        raise ValueError("scatter_mean expects a matrix")
    counts = np.bincount(index, minlength=size).astype(np.float64)
    safe = np.where(counts > 0, counts, 1.0)
    avg = _selector(index, size, 1.0 / safe[index])
    return _make(avg @ a.data, (a,), lambda g: (avg.T @ g,))


# --- parameters ---------------------------------------------------------

def init_params(shape, seed: int, bias: bool = False) -> Tensor:
    """Glorot-uniform weights (deterministic per seed) or a zero bias."""
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if any(s <= 0 for s in shape):
        raise ValueError(f"dimensions must be positive, got {shape}")
    if bias or len(shape) == 1:
        return Tensor(np.zeros(shape), requires_grad=True)
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


class Adam:
    """Adam with bias-corrected moments over a dict of named parameters."""

    def __init__(self, params: dict[str, Tensor], lr=0.006, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                 for k, p in self.params.items()}
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {k!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / (1 - b1 ** self.t)
            v_hat = self.v[k] / (1 - b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# --- checkpoints ----------------------------------------------------------

def save_params(path, params: dict[str, Tensor], meta: dict | None = None) -> None:
    """JSON map name -> {shape, row-major values}; floats use repr (exact)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": {k: {"shape": list(p.shape), "values": [float(v) for v in p.data.ravel()]}
                   for k, p in sorted(params.items())},
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_params(path) -> tuple[dict[str, Tensor], dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint format/version")
    params = {}
    for k, entry in doc["params"].items():
        values = np.asarray(entry["values"], dtype=np.float64)
        params[k] = Tensor(values.reshape(entry["shape"]), requires_grad=True)
    return params, doc.get("meta", {})
