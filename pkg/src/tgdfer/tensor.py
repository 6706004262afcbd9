"""Dense float64 tensors with tape-based reverse-mode differentiation.

Values live in row-major numpy arrays. Differentiable ops append nodes to
the innermost active :class:`Tape` whenever an input requires grad; with no
active tape they are plain value computations, which is what evaluation uses.
``backward`` replays a tape in reverse and accumulates gradients additively
into every requires-grad tensor reachable from the loss.

Tapes are thread-local: forwards for distinct bags may run concurrently as
long as each thread uses its own tape (or none at all).
"""

from __future__ import annotations

import math
import threading

import numpy as np

NORM_EPS = 1e-12
LAYER_NORM_EPS = 1e-5

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class DegenerateVectorError(ValueError):
    """A vector with norm below the guard threshold reached a normalizing op."""


class MissingGradError(RuntimeError):
    """An optimizer step touched a parameter whose grad was never populated."""


class Tensor:
    """A dense float64 array plus optional recorded gradient."""

    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # keep 0-d scalars 0-d
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; the free functions are the actual implementation.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of executed differentiable ops.

    Execution order is a topological order by construction, so one reverse
    sweep propagates gradients correctly.
    """

    def __init__(self):
        self.nodes = []  # (output tensor, backward closure)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self, "tape context exited out of order"
        return False

    def __len__(self) -> int:
        return len(self.nodes)


_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _record(out: Tensor, inputs: tuple, backward_fn) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append((out, backward_fn))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate grads of every requires-grad tensor reachable from ``loss``."""
    if loss.values.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not any(out is loss for out, _ in tape.nodes):
        raise ValueError("loss tensor was not produced on this tape")
    loss.grad = np.ones((), dtype=np.float64)
    for out, backward_fn in reversed(tape.nodes):
        if out.grad is None:
            continue
        backward_fn(out.grad)


class ParameterSet:
    """Named requires-grad tensors with deterministic iteration order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __len__(self) -> int:
        return len(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def num_scalars(self) -> int:
        return sum(t.values.size for t in self._params.values())


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal draw with anything beyond two standard deviations resampled."""
    out = rng.standard_normal(shape)
    mask = np.abs(out) > 2.0
    while mask.any():
        out[mask] = rng.standard_normal(int(mask.sum()))
        mask = np.abs(out) > 2.0
    return out * std


def sgd_step(params: ParameterSet, lr: float) -> None:
    """p <- p - lr * grad(p) for every parameter, then clear grads."""
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    for name, p in params.items():
        if p.grad is None:
            raise MissingGradError(f"parameter {name!r} has no grad; run backward first")
    for _, p in params.items():
        p.values -= lr * p.grad
        p.grad = None


# ---------------------------------------------------------------------------
# Elementwise and linear-algebra ops


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also supports adding a length-n vector to each row of an m x n matrix."""
    if a.shape == b.shape:
        out = Tensor(a.values + b.values)

        def bwd(g):
            _accumulate(a, g)
            _accumulate(b, g)

        return _record(out, (a, b), bwd)
    if a.values.ndim == 2 and b.values.ndim == 1 and a.shape[1] == b.shape[0]:
        out = Tensor(a.values + b.values)

        def bwd(g):
            _accumulate(a, g)
            _accumulate(b, g.sum(axis=0))

        return _record(out, (a, b), bwd)
    raise ShapeError(f"add shapes {a.shape} and {b.shape} do not align")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub shapes {a.shape} and {b.shape} do not align")
    out = Tensor(a.values - b.values)

    def bwd(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes {a.shape} and {b.shape} do not align")
    out = Tensor(a.values * b.values)

    def bwd(g):
        _accumulate(a, g * b.values)
        _accumulate(b, g * a.values)

    return _record(out, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.values * c)

    def bwd(g):
        _accumulate(a, g * c)

    return _record(out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for (m,k)@(k,n); a 1-D left operand is treated as a row vector."""
    if b.values.ndim != 2:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")
    if a.values.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")
        out = Tensor(a.values @ b.values)

        def bwd(g):
            _accumulate(a, g @ b.values.T)
            _accumulate(b, a.values.T @ g)

        return _record(out, (a, b), bwd)
    if a.values.ndim == 1:
        if a.shape[0] != b.shape[0]:
            raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")
        out = Tensor(a.values @ b.values)

        def bwd(g):
            _accumulate(a, g @ b.values.T)
            _accumulate(b, np.outer(a.values, g))

        return _record(out, (a, b), bwd)
    raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    out = Tensor(a.values.T)

    def bwd(g):
        _accumulate(a, g.T)

    return _record(out, (a,), bwd)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    if int(np.prod(shape)) != a.values.size:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}")
    orig = a.shape
    out = Tensor(a.values.reshape(shape))

    def bwd(g):
        _accumulate(a, g.reshape(orig))

    return _record(out, (a,), bwd)


def concat_rows(parts: list) -> Tensor:
    """Stack matrices with equal column counts along axis 0."""
    if not parts:
        raise ShapeError("concat_rows needs at least one part")
    cols = parts[0].shape[1]
    for p in parts:
        if p.values.ndim != 2 or p.shape[1] != cols:
            raise ShapeError(f"concat_rows got incompatible shape {p.shape}, expected (*, {cols})")
    out = Tensor(np.concatenate([p.values for p in parts], axis=0))
    sizes = [p.shape[0] for p in parts]

    def bwd(g):
        offset = 0
        for p, n in zip(parts, sizes):
            _accumulate(p, g[offset:offset + n])
            offset += n

    return _record(out, tuple(parts), bwd)


def concat_cols(parts: list) -> Tensor:
    """Stack matrices with equal row counts along axis 1."""
    if not parts:
        raise ShapeError("concat_cols needs at least one part")
    rows = parts[0].shape[0]
    for p in parts:
        if p.values.ndim != 2 or p.shape[0] != rows:
            raise ShapeError(f"concat_cols got incompatible shape {p.shape}, expected ({rows}, *)")
    out = Tensor(np.concatenate([p.values for p in parts], axis=1))
    sizes = [p.shape[1] for p in parts]

    def bwd(g):
        offset = 0
        for p, n in zip(parts, sizes):
            _accumulate(p, g[:, offset:offset + n])
            offset += n

    return _record(out, tuple(parts), bwd)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"slice_rows needs a matrix, got shape {a.shape}")
    if not (0 <= start < stop <= a.shape[0]):
        raise ShapeError(f"row slice [{start}:{stop}) out of bounds for shape {a.shape}")
    out = Tensor(a.values[start:stop])

    def bwd(g):
        full = np.zeros_like(a.values)
        full[start:stop] = g
        _accumulate(a, full)

    return _record(out, (a,), bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"slice_cols needs a matrix, got shape {a.shape}")
    if not (0 <= start < stop <= a.shape[1]):
        raise ShapeError(f"column slice [{start}:{stop}) out of bounds for shape {a.shape}")
    out = Tensor(a.values[:, start:stop])

    def bwd(g):
        full = np.zeros_like(a.values)
        full[:, start:stop] = g
        _accumulate(a, full)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# Reductions


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.values.sum())

    def bwd(g):
        _accumulate(a, np.full_like(a.values, float(g)))

    return _record(out, (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.values.size
    out = Tensor(a.values.mean())

    def bwd(g):
        _accumulate(a, np.full_like(a.values, float(g) / n))

    return _record(out, (a,), bwd)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over axis 0 of a matrix, yielding one row as a vector."""
    if a.values.ndim != 2:
        raise ShapeError(f"mean_rows needs a matrix, got shape {a.shape}")
    n = a.shape[0]
    out = Tensor(a.values.mean(axis=0))

    def bwd(g):
        _accumulate(a, np.broadcast_to(g / n, a.shape).copy())

    return _record(out, (a,), bwd)


def topk_mean_rows(a: Tensor, k: int) -> Tensor:
    """Per-column mean of the k largest entries (ties favor lower row index)."""
    if a.values.ndim != 2:
        raise ShapeError(f"topk_mean_rows needs a matrix, got shape {a.shape}")
    rows = a.shape[0]
    if not 1 <= k <= rows:
        raise ShapeError(f"k={k} out of range for {rows} rows")
    idx = np.argsort(-a.values, axis=0, kind="stable")[:k]
    out = Tensor(np.take_along_axis(a.values, idx, axis=0).mean(axis=0))

    def bwd(g):
        full = np.zeros_like(a.values)
        np.put_along_axis(full, idx, np.broadcast_to(g / k, idx.shape).copy(), axis=0)
        _accumulate(a, full)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# Nonlinearities and normalizations


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.values, 0.0))

    def bwd(g):
        _accumulate(a, g * (a.values > 0))

    return _record(out, (a,), bwd)


def gelu(a: Tensor) -> Tensor:
    """Exact erf-form GELU."""
    x = a.values
    cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    out = Tensor(x * cdf)

    def bwd(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        _accumulate(a, g * (cdf + x * pdf))

    return _record(out, (a,), bwd)


try:
    from scipy.special import erf as _erf
except ImportError:  # pragma: no cover
    _erf = np.vectorize(math.erf)


def softmax(a: Tensor, axis: int) -> Tensor:
    """Stable softmax along ``axis`` (max-subtracted)."""
    nd = a.values.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def bwd(g):
        _accumulate(a, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _record(out, (a,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply gain and bias."""
    d = x.shape[-1]
    if d < 2:
        raise ShapeError(f"layer_norm needs last-axis width >= 2, got shape {x.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias shapes {gain.shape}/{bias.shape} do not match width {d}")
    mu = x.values.mean(axis=-1, keepdims=True)
    var = x.values.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (x.values - mu) * inv
    out = Tensor(xhat * gain.values + bias.values)

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=lead))
        _accumulate(bias, g.sum(axis=lead))
        gg = g * gain.values
        _accumulate(
            x,
            inv * (gg - gg.mean(axis=-1, keepdims=True)
                   - xhat * (gg * xhat).mean(axis=-1, keepdims=True)),
        )

    return _record(out, (x, gain, bias), bwd)


def l2_normalize(a: Tensor) -> Tensor:
    """Scale a vector, or each row of a matrix, to unit L2 norm."""
    if a.values.ndim == 1:
        norms = np.linalg.norm(a.values)
        if norms <= NORM_EPS:
            raise DegenerateVectorError(f"cannot normalize vector with norm {norms:.3e}")
        y = a.values / norms
        out = Tensor(y)

        def bwd(g):
            _accumulate(a, (g - y * (g @ y)) / norms)

        return _record(out, (a,), bwd)
    if a.values.ndim == 2:
        norms = np.linalg.norm(a.values, axis=1, keepdims=True)
        if (norms <= NORM_EPS).any():
            row = int(np.argmin(norms))
            raise DegenerateVectorError(f"cannot normalize row {row} with norm {float(norms[row, 0]):.3e}")
        y = a.values / norms
        out = Tensor(y)

        def bwd(g):
            _accumulate(a, (g - y * (g * y).sum(axis=1, keepdims=True)) / norms)

        return _record(out, (a,), bwd)
    raise ShapeError(f"l2_normalize needs a vector or matrix, got shape {a.shape}")


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """u.v / (|u||v|) for two vectors of equal length."""
    if u.values.ndim != 1 or v.values.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine_similarity needs equal-length vectors, got {u.shape} and {v.shape}")
    nu = np.linalg.norm(u.values)
    nv = np.linalg.norm(v.values)
    if nu <= NORM_EPS or nv <= NORM_EPS:
        raise DegenerateVectorError(f"cosine_similarity got degenerate vector (norms {nu:.3e}, {nv:.3e})")
    c = float(u.values @ v.values / (nu * nv))
    out = Tensor(c)

    def bwd(g):
        g = float(g)
        _accumulate(u, g * (v.values / (nu * nv) - c * u.values / (nu * nu)))
        _accumulate(v, g * (u.values / (nu * nv) - c * v.values / (nv * nv)))

    return _record(out, (u, v), bwd)


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target], computed in fused stable form."""
    if logits.values.ndim != 1:
        raise ShapeError(f"cross_entropy needs a logit vector, got shape {logits.shape}")
    n = logits.shape[0]
    if not 0 <= target < n:
        raise IndexError(f"target {target} out of range for {n} classes")
    m = logits.values.max()
    e = np.exp(logits.values - m)
    z = e.sum()
    out = Tensor(m + np.log(z) - logits.values[target])

    def bwd(g):
        p = e / z
        p[target] -= 1.0
        _accumulate(logits, float(g) * p)

    return _record(out, (logits,), bwd)


def overlap_mean(segments: list, starts: list, total_rows: int) -> Tensor:
    """Scatter equal-width row blocks back to ``total_rows`` rows, averaging overlaps.

    Rows covered by no segment stay zero; callers that need full coverage must
    arrange the starts accordingly.
    """
    if len(segments) != len(starts) or not segments:
        raise ShapeError("overlap_mean needs one start per segment")
    width, cols = segments[0].shape
    coverage = np.zeros(total_rows)
    for seg, start in zip(segments, starts):
        if seg.shape != (width, cols):
            raise ShapeError(f"overlap_mean segment shape {seg.shape} != {(width, cols)}")
        if not 0 <= start <= total_rows - width:
            raise ShapeError(f"overlap_mean start {start} out of range for {total_rows} rows")
        coverage[start:start + width] += 1
    denom = np.maximum(coverage, 1.0)[:, None]
    acc = np.zeros((total_rows, cols))
    for seg, start in zip(segments, starts):
        acc[start:start + width] += seg.values
    out = Tensor(acc / denom)

    def bwd(g):
        scaled = g / denom
        for seg, start in zip(segments, starts):
            _accumulate(seg, scaled[start:start + width])

    return _record(out, tuple(segments), bwd)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias."""
    return add(matmul(x, weight), bias)
