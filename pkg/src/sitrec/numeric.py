"""Dense tensors with reverse-mode automatic differentiation.

Small numpy-backed autodiff core: a Tensor records the operation that
produced it (parent links + a backward closure), and `backward` walks the
implicit graph in reverse topological order. 64-bit is the default mode;
32-bit can be enabled for faster training runs, but gradient checks are
only reliable in 64-bit.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class NumericError(ValueError):
    """Shape mismatch, non-finite values, or invalid op arguments."""


_DEFAULT_DTYPE = np.float64

# Additive bias used to remove tokens from a softmax's support. Finite so
# that downstream arithmetic never produces NaN; exp() underflows to 0.
MASK_BIAS = -1e30


def set_default_dtype(dtype) -> None:
    """Switch between float64 (test/oracle mode) and float32 (fast mode)."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise NumericError(f"unsupported dtype {dtype!r}")
    _DEFAULT_DTYPE = dt.type


def default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """N-d array plus the bookkeeping needed for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(*tensors: Tensor) -> None:
    for t in tensors:
        if not np.isfinite(t.data).all():
            raise NumericError("non-finite input to op")


def _make(data: np.ndarray, parents: tuple[Tensor, ...],
          backward: Callable[[np.ndarray], None] | None) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


# ---------------------------------------------------------------------------
# forward ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_finite(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise NumericError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(out, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; `b` may be a row vector broadcast over a's rows."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_finite(a, b)
    if a.shape != b.shape and not (
        a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]
    ):
        raise NumericError(f"add shape mismatch {a.shape} + {b.shape}")
    out = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, g.sum(axis=0) if b.data.ndim < g.ndim else g)

    return _make(out, (a, b), bwd)


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_finite(a, b)
    if a.shape != b.shape:
        raise NumericError(f"elementwise_mul shape mismatch {a.shape} * {b.shape}")
    out = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)

    return _make(out, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    a = _as_tensor(a)
    _check_finite(a)
    s = float(s)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * s)

    return _make(a.data * s, (a,), bwd)


def add_scalar(a: Tensor, s: float) -> Tensor:
    a = _as_tensor(a)
    _check_finite(a)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g)

    return _make(a.data + float(s), (a,), bwd)


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    _check_finite(*parts)
    if not parts:
        raise NumericError("concat of zero tensors")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(p, g[tuple(idx)])

    return _make(out, tuple(parts), bwd)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    _check_finite(x)
    out = 1.0 / (1.0 + np.exp(-np.clip(x.data, -500, 500)))

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * out * (1.0 - out))

    return _make(out, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    _check_finite(x)
    out = np.tanh(x.data)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * (1.0 - out * out))

    return _make(out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    _check_finite(x)
    out = np.maximum(x.data, 0.0)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * (x.data > 0))

    return _make(out, (x,), bwd)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis; rows sum to 1."""
    x = _as_tensor(x)
    _check_finite(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            dot = (g * out).sum(axis=-1, keepdims=True)
            _accum(x, out * (g - dot))

    return _make(out, (x,), bwd)


def log_softmax(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    _check_finite(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def bwd(g):
        if x.requires_grad:
            p = np.exp(out)
            _accum(x, g - p * g.sum(axis=-1, keepdims=True))

    return _make(out, (x,), bwd)


def embedding_lookup(table: Tensor, indices) -> Tensor:
    """Gather rows of `table` by integer index; returns [len(indices) x E]."""
    table = _as_tensor(table)
    _check_finite(table)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise NumericError("embedding_lookup expects a 1-d index array")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise NumericError("embedding index out of range")
    out = table.data[idx]

    def bwd(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx, g)

    return _make(out, (table,), bwd)


def mean_pool(x: Tensor, axis: int = 0) -> Tensor:
    x = _as_tensor(x)
    _check_finite(x)
    out = x.data.mean(axis=axis)
    n = x.data.shape[axis]

    def bwd(g):
        if x.requires_grad:
            _accum(x, np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    return _make(out, (x,), bwd)


def max_pool(x: Tensor, axis: int = 0) -> Tensor:
    """Max over `axis`; gradient flows to the first argmax on ties."""
    x = _as_tensor(x)
    _check_finite(x)
    out = x.data.max(axis=axis)
    amax = x.data.argmax(axis=axis)

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.put_along_axis(
                gx, np.expand_dims(amax, axis), np.expand_dims(g, axis), axis
            )
            _accum(x, gx)

    return _make(out, (x,), bwd)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max of two same-shape tensors; ties route gradient to `a`."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_finite(a, b)
    if a.shape != b.shape:
        raise NumericError(f"maximum shape mismatch {a.shape} vs {b.shape}")
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * take_a)
        if b.requires_grad:
            _accum(b, g * ~take_a)

    return _make(out, (a, b), bwd)


def weighted_cross_entropy(logits: Tensor, targets, class_weights=None) -> Tensor:
    """Per-row loss w[target] * (-log softmax(logits)[target]).

    `targets` is an int array (scalar allowed for 1-d logits); a target of -1
    marks a padding row that contributes zero loss and zero gradient.
    `class_weights` is a plain array of strictly positive per-class weights;
    None means all ones, in which case the result equals unweighted
    cross-entropy exactly.
    """
    logits = _as_tensor(logits)
    _check_finite(logits)
    squeeze = logits.data.ndim == 1
    mat = logits.data.reshape(1, -1) if squeeze else logits.data
    if mat.ndim != 2:
        raise NumericError("weighted_cross_entropy expects 1-d or 2-d logits")
    tgt = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if tgt.shape != (mat.shape[0],):
        raise NumericError(f"targets shape {tgt.shape} does not match batch {mat.shape[0]}")
    if (tgt >= mat.shape[1]).any():
        raise NumericError("target index out of range")
    if class_weights is None:
        w = np.ones(mat.shape[1], dtype=mat.dtype)
    else:
        w = np.asarray(class_weights, dtype=mat.dtype)
        if w.shape != (mat.shape[1],):
            raise NumericError("class_weights shape mismatch")
        if (w <= 0).any():
            raise NumericError("class weights must be strictly positive")

    live = tgt >= 0
    safe_tgt = np.where(live, tgt, 0)
    shifted = mat - mat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(mat.shape[0])
    wt = w[safe_tgt] * live
    losses = -wt * logp[rows, safe_tgt]
    out = losses[0] if squeeze else losses

    def bwd(g):
        if logits.requires_grad:
            p = np.exp(logp)
            gl = p.copy()
            gl[rows, safe_tgt] -= 1.0
            gl *= (wt * np.atleast_1d(g))[:, None]
            _accum(logits, gl[0] if squeeze else gl)

    return _make(out, (logits,), bwd)


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    _check_finite(x)

    def bwd(g):
        if x.requires_grad:
            _accum(x, np.full_like(x.data, float(g)))

    return _make(np.asarray(x.data.sum()), (x,), bwd)


def scale_rows(x: Tensor, col: Tensor) -> Tensor:
    """Multiply each row of x [N x D] by the matching entry of col [N x 1]."""
    x, col = _as_tensor(x), _as_tensor(col)
    _check_finite(x, col)
    if x.data.ndim != 2 or col.data.shape != (x.shape[0], 1):
        raise NumericError(f"scale_rows shape mismatch {x.shape} vs {col.shape}")
    out = x.data * col.data

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * col.data)
        if col.requires_grad:
            _accum(col, (g * x.data).sum(axis=1, keepdims=True))

    return _make(out, (x, col), bwd)


def repeat_rows(x: Tensor, k: int) -> Tensor:
    """Repeat each row of a 2-d tensor k times (row i -> rows i*k..i*k+k-1)."""
    x = _as_tensor(x)
    _check_finite(x)
    if x.data.ndim != 2:
        raise NumericError("repeat_rows expects a 2-d tensor")
    out = np.repeat(x.data, k, axis=0)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g.reshape(x.shape[0], k, x.shape[1]).sum(axis=1))

    return _make(out, (x,), bwd)


def sum_segments(x: Tensor, k: int) -> Tensor:
    """Sum consecutive blocks of k rows; inverse-shaped counterpart of repeat_rows."""
    x = _as_tensor(x)
    _check_finite(x)
    if x.data.ndim != 2 or x.shape[0] % k != 0:
        raise NumericError(f"sum_segments: {x.shape[0]} rows not divisible by {k}")
    out = x.data.reshape(x.shape[0] // k, k, x.shape[1]).sum(axis=1)

    def bwd(g):
        if x.requires_grad:
            _accum(x, np.repeat(g, k, axis=0))

    return _make(out, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    _check_finite(x)
    out = x.data.reshape(shape)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g.reshape(x.data.shape))

    return _make(out, (x,), bwd)


def transpose(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    _check_finite(x)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g.T)

    return _make(x.data.T, (x,), bwd)


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    x = _as_tensor(x)
    _check_finite(x)
    if x.data.ndim != 2:
        raise NumericError("slice_cols expects a 2-d tensor")

    def bwd(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[:, lo:hi] += g

    return _make(x.data[:, lo:hi], (x,), bwd)


# ---------------------------------------------------------------------------
# backward pass


def topo_order(root: Tensor) -> list[Tensor]:
    """Parents-before-children ordering of the graph below `root` (iterative)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) to every reachable tensor's .grad slot.

    Gradients accumulate: callers owning parameters should zero .grad
    between steps. Disconnected parameters simply keep grad None/zeros.
    """
    if loss.data.size != 1:
        raise NumericError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = topo_order(loss)
    for node in order:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# parameters


class ParameterStore:
    """Named, uniquely-keyed trainable tensors plus optimizer state slots."""

    def __init__(self, seed: int = 0):
        self.params: dict[str, Tensor] = {}
        self.groups: dict[str, str] = {}
        self.opt_state: dict = {}
        self.rng = np.random.default_rng(seed)

    def add(self, name: str, shape, init: str = "uniform",
            scale: float = 0.08, group: str = "main") -> Tensor:
        if name in self.params:
            raise NumericError(f"duplicate parameter {name!r}")
        if init == "uniform":
            data = self.rng.uniform(-scale, scale, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        else:
            raise NumericError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        self.groups[name] = group
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Copy of each parameter's gradient (zeros when disconnected)."""
        return {
            name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
            for name, t in self.params.items()
        }

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            t = self.params[name]
            if t.data.shape != arr.shape:
                raise NumericError(f"shape mismatch loading {name!r}")
            t.data = np.asarray(arr, dtype=_DEFAULT_DTYPE).copy()


# ---------------------------------------------------------------------------
# gradient verification


def finite_diff_check(fn: Callable[[Tensor], Tensor], point: Tensor,
                      eps: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8). `fn`
    must be a pure tensor -> scalar function.
    """
    if eps <= 0:
        raise NumericError("eps must be positive")
    x = Tensor(point.data.copy(), requires_grad=True)
    loss = fn(x)
    backward(loss)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    probe = Tensor(x.data.copy())
    pflat = probe.data.reshape(-1)
    for i in range(flat.size):
        orig = pflat[i]
        pflat[i] = orig + eps
        hi = float(fn(probe).data)
        pflat[i] = orig - eps
        lo = float(fn(probe).data)
        pflat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError("fn non-finite at perturbed point")
        numeric[i] = (hi - lo) / (2.0 * eps)

    a = analytic.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    return float((np.abs(a - numeric) / denom).max())


def check_store_gradients(build_loss: Callable[[], Tensor], store: ParameterStore,
                          eps: float = 1e-5,
                          param_names: Iterable[str] | None = None) -> float:
    """finite_diff_check over every named parameter of a store.

    `build_loss` re-runs the forward pass from current parameter values.
    Returns the worst relative error across all checked coordinates.
    """
    store.zero_grads()
    loss = build_loss()
    backward(loss)
    analytic = store.grads()
    store.zero_grads()

    worst = 0.0
    names = list(param_names) if param_names is not None else store.names()
    for name in names:
        t = store[name]
        flat = t.data.reshape(-1)
        a = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(build_loss().data)
            flat[i] = orig - eps
            lo = float(build_loss().data)
            flat[i] = orig
            n = (hi - lo) / (2.0 * eps)
            denom = max(abs(a[i]), abs(n), 1e-8)
            worst = max(worst, abs(a[i] - n) / denom)
    return worst
