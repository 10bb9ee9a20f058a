"""Tape-based reverse-mode autodiff over dense numpy arrays.

Every learnable value in this package (language model and audio encoder
parameters) is a ``Tensor``. Differentiable operations are free functions
that, while a ``Tape`` is active (see ``recording``), append a node with a
local gradient rule; ``backward`` replays the tape in reverse and
accumulates gradients into the participating leaf tensors.

Scalars default to float64 so finite-difference gradient checks can be
tight; ``set_default_dtype("float32")`` switches the whole stack to the
faster 32-bit mode.
"""

import math
import os
from contextlib import contextmanager

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, UsageError

_DEFAULT_DTYPE = np.float64


def _tune_allocator() -> None:
    # Temporary arrays here sit just above glibc's default mmap threshold,
    # so every elementwise op would pay an mmap/munmap page-fault cycle.
    # Raising the thresholds keeps temporaries on the heap (~6x faster
    # forward/backward). Harmless no-op on non-glibc platforms.
    if os.environ.get("SPEECHALIGN_NO_MALLOC_TUNING"):
        return
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 64 * 1024 * 1024)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 64 * 1024 * 1024)  # M_TRIM_THRESHOLD
    except Exception:
        pass


_tune_allocator()


def set_default_dtype(name: str) -> None:
    """Select the scalar type ("float64" default, "float32" optional)."""
    global _DEFAULT_DTYPE
    if name not in ("float32", "float64"):
        raise ConfigError(f"unsupported scalar type {name!r}")
    _DEFAULT_DTYPE = np.dtype(name).type


def default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """A dense array plus gradient bookkeeping.

    Leaf tensors created with ``requires_grad=True`` own a ``grad`` array
    (zeros until ``backward`` runs, accumulated across calls until
    ``zero_grad``). Tensors produced by operations propagate
    ``requires_grad`` so recording continues downstream, but their
    adjoints live only inside ``backward``.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)


def _make(arr: np.ndarray, requires_grad: bool) -> Tensor:
    # Internal constructor: no grad buffer is allocated for op outputs.
    out = Tensor.__new__(Tensor)
    out.data = arr
    out.requires_grad = requires_grad
    out.grad = None
    return out


class TapeNode:
    __slots__ = ("inputs", "output", "grad_fn")

    def __init__(self, inputs, output, grad_fn):
        self.inputs = inputs
        self.output = output
        self.grad_fn = grad_fn


class Tape:
    """Execution-ordered record of one forward pass (define-by-run).

    Nodes are appended in the order operations run, so inputs always
    precede the node that consumes them; replaying in reverse visits each
    node exactly once.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, inputs: tuple[Tensor, ...], output: Tensor, grad_fn) -> None:
        """Append one operation; grad_fn maps the output adjoint to input adjoints."""
        self.nodes.append(TapeNode(inputs, output, grad_fn))


_TAPE: Tape | None = None


@contextmanager
def recording():
    """Activate a fresh tape for the duration of the block.

    Tapes do not nest onto each other; the previous tape (if any) is
    restored on exit. A tape records a single forward pass and is
    single-writer by construction.
    """
    global _TAPE
    prev = _TAPE
    tape = Tape()
    _TAPE = tape
    try:
        yield tape
    finally:
        _TAPE = prev


def active_tape() -> Tape | None:
    return _TAPE


def _apply(arr: np.ndarray, inputs: tuple[Tensor, ...], grad_fn) -> Tensor:
    requires = any(t.requires_grad for t in inputs)
    out = _make(arr, requires)
    if requires and _TAPE is not None:
        _TAPE.record(inputs, out, grad_fn)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into every participating leaf's ``grad``.

    Leaves the loss cannot reach keep the zero gradient they were created
    with. Parameter data must not be mutated while the tape that
    referenced it is still to be replayed.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericError("backward called on a non-finite loss")
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        out_grad = adjoint.pop(id(node.output), None)
        if out_grad is None:
            continue
        input_grads = node.grad_fn(out_grad)
        for tensor, grad in zip(node.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor.grad is not None:  # leaf
                tensor.grad += grad
                continue
            key = id(tensor)
            if key in adjoint:
                adjoint[key] += grad
            else:
                adjoint[key] = grad


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    arr = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _apply(arr, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    arr = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _apply(arr, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    arr = a.data * b.data
    da, db = a.data, b.data

    def grad_fn(g):
        return _unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape)

    return _apply(arr, (a, b), grad_fn)


def neg(a: Tensor) -> Tensor:
    return _apply(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a non-differentiable python scalar."""
    return _apply(a.data * factor, (a,), lambda g: (g * factor,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    arr = a.data @ b.data
    da, db = a.data, b.data

    def grad_fn(g):
        return g @ db.T, da.T @ g

    return _apply(arr, (a, b), grad_fn)


def transpose(a: Tensor) -> Tensor:
    return _apply(a.data.T.copy(), (a,), lambda g: (g.T.copy(),))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - numpy-style name
    arr = np.asarray(a.data.sum())
    shape = a.data.shape

    def grad_fn(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _apply(arr, (a,), grad_fn)


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    arr = np.asarray(a.data.sum() / n)
    shape = a.data.shape

    def grad_fn(g):
        return (np.broadcast_to(g / n, shape).copy(),)

    return _apply(arr, (a,), grad_fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``; rejects non-finite input."""
    if not np.isfinite(x.data).all():
        raise NumericError("softmax received non-finite input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return _apply(y, (x,), grad_fn)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not np.isfinite(x.data).all():
        raise NumericError("log_softmax received non-finite input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def grad_fn(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _apply(y, (x,), grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma/beta {gamma.data.shape}/{beta.data.shape} do not match feature dim {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    y = xhat * gamma.data + beta.data
    gdata = gamma.data
    lead_axes = tuple(range(x.data.ndim - 1))

    def grad_fn(g):
        dxhat = g * gdata
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        dgamma = (g * xhat).sum(axis=lead_axes) if lead_axes else g * xhat
        dbeta = g.sum(axis=lead_axes) if lead_axes else g.copy()
        return dx, dgamma, dbeta

    return _apply(y, (x, gamma, beta), grad_fn)


def _same_pad(T: int, k: int, stride: int) -> tuple[int, int, int]:
    out_len = -(-T // stride)
    pad_total = max((out_len - 1) * stride + k - T, 0)
    left = pad_total // 2
    return out_len, left, pad_total - left


def conv1d_depthwise(x: Tensor, kernel: Tensor, stride: int = 1) -> Tensor:
    """Per-channel sliding-window correlation with same-style zero padding.

    x is (T, d), kernel (k, d) with odd k; the output has ceil(T / stride)
    rows, so stride 1 preserves length.
    """
    if kernel.data.ndim != 2 or kernel.data.shape[0] % 2 == 0:
        raise ConfigError(f"depthwise kernel must be (odd, channels), got {kernel.data.shape}")
    if x.data.ndim != 2 or x.data.shape[1] != kernel.data.shape[1]:
        raise DimensionError(
            f"conv1d_depthwise: input {x.data.shape} vs kernel {kernel.data.shape}"
        )
    T, d = x.data.shape
    k = kernel.data.shape[0]
    out_len, left, right = _same_pad(T, k, stride)
    xp = np.zeros((T + left + right, d), dtype=x.data.dtype)
    xp[left : left + T] = x.data
    span = (out_len - 1) * stride + 1
    out = np.zeros((out_len, d), dtype=x.data.dtype)
    for j in range(k):
        out += xp[j : j + span : stride] * kernel.data[j]
    kdata = kernel.data

    def grad_fn(g):
        gk = np.empty_like(kdata)
        gxp = np.zeros_like(xp)
        for j in range(k):
            tap = xp[j : j + span : stride]
            gk[j] = (g * tap).sum(axis=0)
            gxp[j : j + span : stride] += g * kdata[j]
        return gxp[left : left + T], gk

    return _apply(out, (x, kernel), grad_fn)


def relu(x: Tensor) -> Tensor:
    arr = np.maximum(x.data, 0.0)
    mask = x.data > 0

    def grad_fn(g):
        return (g * mask,)

    return _apply(arr, (x,), grad_fn)


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))

    def grad_fn(g):
        return (g * s * (1.0 - s),)

    return _apply(s, (x,), grad_fn)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def grad_fn(g):
        return (g * (1.0 - t * t),)

    return _apply(t, (x,), grad_fn)


def swish(x: Tensor) -> Tensor:
    """x * sigmoid(x), the conformer activation."""
    s = 1.0 / (1.0 + np.exp(-x.data))
    arr = x.data * s
    xd = x.data

    def grad_fn(g):
        return (g * (s + xd * s * (1.0 - s)),)

    return _apply(arr, (x,), grad_fn)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximation GELU."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    arr = 0.5 * xd * (1.0 + t)

    def grad_fn(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _apply(arr, (x,), grad_fn)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of an embedding table by integer id."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise DimensionError(
            f"embedding ids out of range for table with {table.data.shape[0]} rows"
        )
    arr = table.data[idx]
    shape = table.data.shape

    def grad_fn(g):
        gt = np.zeros(shape, dtype=g.dtype)
        np.add.at(gt, idx, g)
        return (gt,)

    return _apply(arr, (table,), grad_fn)


def concat_rows(parts: list[Tensor]) -> Tensor:
    arr = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.data.shape[0] for p in parts]

    def grad_fn(g):
        grads, start = [], 0
        for n in sizes:
            grads.append(g[start : start + n])
            start += n
        return tuple(grads)

    return _apply(arr, tuple(parts), grad_fn)


def concat_cols(parts: list[Tensor]) -> Tensor:
    arr = np.concatenate([p.data for p in parts], axis=1)
    sizes = [p.data.shape[1] for p in parts]

    def grad_fn(g):
        grads, start = [], 0
        for n in sizes:
            grads.append(g[:, start : start + n])
            start += n
        return tuple(grads)

    return _apply(arr, tuple(parts), grad_fn)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    arr = x.data[start:stop].copy()
    shape = x.data.shape

    def grad_fn(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[start:stop] = g
        return (gx,)

    return _apply(arr, (x,), grad_fn)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    arr = x.data[:, start:stop].copy()
    shape = x.data.shape

    def grad_fn(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[:, start:stop] = g
        return (gx,)

    return _apply(arr, (x,), grad_fn)


def pad_rows(x: Tensor, count: int) -> Tensor:
    """Append ``count`` zero rows."""
    T, d = x.data.shape
    arr = np.zeros((T + count, d), dtype=x.data.dtype)
    arr[:T] = x.data

    def grad_fn(g):
        return (g[:T].copy(),)

    return _apply(arr, (x,), grad_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.data.shape
    arr = x.data.reshape(shape).copy()

    def grad_fn(g):
        return (g.reshape(old).copy(),)

    return _apply(arr, (x,), grad_fn)


def take_rc(x: Tensor, rows, cols) -> Tensor:
    """Gather x[rows[i], cols[i]] into a vector."""
    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)
    arr = x.data[r, c].copy()
    shape = x.data.shape

    def grad_fn(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, (r, c), g)
        return (gx,)

    return _apply(arr, (x,), grad_fn)


def custom_op(arr: np.ndarray, inputs: tuple[Tensor, ...], grad_fn) -> Tensor:
    """Record a caller-supplied forward value with its gradient rule.

    Used by operations whose gradients are cheaper to state than to
    compose (the CTC forward-backward recursion, notably).
    """
    return _apply(np.asarray(arr, dtype=_DEFAULT_DTYPE), inputs, grad_fn)


# ---------------------------------------------------------------------------
# fused operations (single tape node where composition would cost several)
# ---------------------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise DimensionError(f"linear: incompatible shapes {x.data.shape} @ {w.data.shape}")
    arr = x.data @ w.data
    if b is not None:
        arr = arr + b.data
    dx, dw = x.data, w.data

    def grad_fn(g):
        if b is None:
            return g @ dw.T, dx.T @ g
        return g @ dw.T, dx.T @ g, g.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return _apply(arr, inputs, grad_fn)


def add_scaled(a: Tensor, b: Tensor, factor: float) -> Tensor:
    """a + factor * b (same shapes); the conformer half-step residual."""
    arr = a.data + factor * b.data

    def grad_fn(g):
        return g, g * factor

    return _apply(arr, (a, b), grad_fn)


def glu(x: Tensor) -> Tensor:
    """Gated linear unit over column halves: first * sigmoid(second)."""
    d = x.data.shape[-1]
    if d % 2 != 0:
        raise DimensionError(f"glu needs an even trailing dim, got {d}")
    half = d // 2
    val = x.data[..., :half]
    gate = 1.0 / (1.0 + np.exp(-x.data[..., half:]))
    arr = val * gate

    def grad_fn(g):
        gx = np.empty_like(x.data)
        gx[..., :half] = g * gate
        gx[..., half:] = g * val * gate * (1.0 - gate)
        return (gx,)

    return _apply(arr, (x,), grad_fn)


def _to_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    T, d = x.shape
    return np.ascontiguousarray(x.reshape(T, num_heads, d // num_heads).transpose(1, 0, 2))


def _from_heads(x3: np.ndarray) -> np.ndarray:
    h, T, hd = x3.shape
    return np.ascontiguousarray(x3.transpose(1, 0, 2)).reshape(T, h * hd)


def attention_scores(q: Tensor, k: Tensor, num_heads: int, inv_sqrt: float) -> Tensor:
    """All-head attention logits: (T, d) q/k -> (heads, T, T) scaled scores."""
    q3 = _to_heads(q.data, num_heads)  # (h, T, hd)
    k3 = _to_heads(k.data, num_heads)
    arr = np.matmul(q3, k3.transpose(0, 2, 1)) * inv_sqrt

    def grad_fn(g):
        gq = np.matmul(g, k3) * inv_sqrt
        gk = np.matmul(g.transpose(0, 2, 1), q3) * inv_sqrt
        return _from_heads(gq), _from_heads(gk)

    return _apply(arr, (q, k), grad_fn)


def attention_context(weights: Tensor, v: Tensor, num_heads: int) -> Tensor:
    """(heads, T, T) weights applied to (T, d) values -> (T, d) context."""
    v3 = _to_heads(v.data, num_heads)  # (h, T, hd)
    w3 = weights.data
    arr = _from_heads(np.matmul(w3, v3))

    def grad_fn(g):
        g3 = _to_heads(g, num_heads)
        gw = np.matmul(g3, v3.transpose(0, 2, 1))
        gv = np.matmul(w3.transpose(0, 2, 1), g3)
        return gw, _from_heads(gv)

    return _apply(arr, (weights, v), grad_fn)
