"""Reverse-mode automatic differentiation over dense float64 arrays.

Operations executed while a :class:`Tape` is active are appended to it in
execution order; :meth:`Tape.backward` then walks that list once in reverse.
Outside a tape every op is a plain numpy forward computation, which is what
the decoders use for inference-only paths.
"""

from __future__ import annotations

import contextvars
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "bolt_active_tape", default=None
)

_GELU_C = math.sqrt(2.0 / math.pi)
LAYER_NORM_EPS = 1e-5


class ShapeError(ValueError):
    pass


class Tensor:
    """A float64 array with an optional gradient and a tape position."""

    __slots__ = ("data", "grad", "requires_grad", "kind", "parents", "backward_rule", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.kind = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self.backward_rule = None
        self.node_id: int | None = None

    # -- array facade -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Flat view of the data."""
        return self.data.reshape(-1)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, kind={self.kind!r}, requires_grad={self.requires_grad})"

    # -- operators ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return mul(self, reciprocal(as_tensor(other)))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


class Tape:
    """Ordered record of differentiable operations.

    Usable as a context manager; nesting restores the outer tape on exit.
    Each tape belongs to one thread of work, there is no locking.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def kinds(self) -> set[str]:
        return {n.kind for n in self.nodes}

    def record(self, t: Tensor) -> None:
        t.node_id = len(self.nodes)
        self.nodes.append(t)

    def backward(self, root: Tensor) -> None:
        if root.data.size != 1:
            raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
        if root.node_id is None or root.node_id >= len(self.nodes) or self.nodes[root.node_id] is not root:
            if root.kind == "leaf" and root.requires_grad:
                root.grad = root.grad + np.ones_like(root.data)
                return
            raise ValueError("root tensor was not recorded on this tape")
        for node in self.nodes:
            node.grad = None
        root.grad = np.ones_like(root.data)
        for node in reversed(self.nodes[: root.node_id + 1]):
            g = node.grad
            if g is None:
                continue
            grads = node.backward_rule(g)
            for parent, pg in zip(node.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.data.shape:
                    pg = np.broadcast_to(pg, parent.data.shape)
                if parent.grad is None:
                    # rules never write into their arrays, so sharing g is safe
                    parent.grad = pg
                else:
                    parent.grad = parent.grad + pg


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def backward(root: Tensor, tape: Tape | None = None) -> None:
    """Populate ``.grad`` on every leaf reachable from ``root``.

    Leaves are accumulated into (call ``zero_grad`` between steps); leaves the
    root does not depend on keep whatever they held, which is zeros for a
    fresh leaf.
    """
    tape = tape or active_tape()
    if tape is None:
        raise ValueError("backward called with no tape")
    tape.backward(root)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record_op(
    kind: str,
    inputs: Sequence[Tensor],
    forward: Callable[..., np.ndarray],
    backward_rule: Callable[..., Sequence[np.ndarray | None]],
) -> Tensor:
    """Run ``forward`` on the input arrays and record the op if a tape is active.

    ``backward_rule(grad_out, out, *input_arrays)`` returns one gradient (or
    None) per input.
    """
    inputs = tuple(as_tensor(x) for x in inputs)
    arrays = [x.data for x in inputs]
    out = Tensor(forward(*arrays))
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(x.requires_grad for x in inputs):
        out.requires_grad = True
        out.kind = kind
        out.parents = inputs
        out_data = out.data
        out.backward_rule = lambda g: backward_rule(g, out_data, *arrays)
        tape.record(out)
    return out


def _node(kind: str, data: np.ndarray, parents: tuple[Tensor, ...], rule) -> Tensor:
    # Fast path used by the built-in ops: rule(g) closes over what it needs.
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.kind = kind
    out.node_id = None
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_rule = rule
        tape.record(out)
    else:
        out.requires_grad = False
        out.parents = ()
        out.backward_rule = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(kind: str, a: np.ndarray, b: np.ndarray) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.data, b.data)
    sa, sb = a.shape, b.shape
    return _node("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.data, b.data)
    sa, sb = a.shape, b.shape
    return _node("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.data, b.data)
    ad, bd = a.data, b.data
    return _node(
        "mul", ad * bd, (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                   _unbroadcast(g * ad, bd.shape) if b.requires_grad else None),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node("scale", a.data * c, (a,), lambda g: (g * c,))


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _node("reciprocal", out, (a,), lambda g: (-g * out * out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _node("log", np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    x2 = x * x
    inner = _GELU_C * x * (1.0 + 0.044715 * x2)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def rule(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner),)

    return _node("gelu", out, (a,), rule)


def minimum(a: Tensor, cap: float) -> Tensor:
    """Elementwise min(a, cap); gradient is zero where a >= cap."""
    x = a.data
    mask = x < cap
    return _node("minimum", np.where(mask, x, cap), (a,), lambda g: (g * mask,))


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape} are not aligned")
    try:
        out = ad @ bd
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {ad.shape} and {bd.shape} do not broadcast") from None

    def rule(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2:
                # fold the batch dims into one product instead of summing per-batch products
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _node("matmul", out, (a, b), rule)


# -- reductions and normalizers --------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node("sum", np.asarray(out), (a,), rule)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def max_(a: Tensor, axis: int = -1) -> Tensor:
    """Max over one axis; ties send the gradient to the first maximal entry."""
    x = a.data
    idx = np.argmax(x, axis=axis)
    out = np.take_along_axis(x, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def rule(g):
        gx = np.zeros_like(x)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _node("max", out, (a,), rule)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node("softmax", out, (a,), rule)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def rule(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node("log_softmax", out, (a,), rule)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    x = a.data
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: input {x.shape} with gain {gain.shape} and bias {bias.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def rule(g):
        gxhat = g * gd
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _node("layer_norm", out, (a, gain, bias), rule)


def cross_entropy(logits: Tensor, targets, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under row-wise softmax."""
    x = logits.data
    t = np.asarray(targets, dtype=np.int64)
    if x.ndim != 2 or t.shape != (x.shape[0],):
        raise ShapeError(f"cross_entropy: logits {x.shape} and targets {t.shape}")
    keep = np.ones(t.shape, dtype=bool) if ignore_index is None else t != ignore_index
    n = max(int(keep.sum()), 1)
    safe_t = np.where(keep, t, 0)
    shifted = x - x.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    rows = np.arange(x.shape[0])
    loss = -(logp[rows, safe_t] * keep).sum() / n

    def rule(g):
        p = np.exp(logp)
        p[rows, safe_t] -= 1.0
        return (p * (keep[:, None] * (float(g) / n)),)

    return _node("cross_entropy", np.asarray(loss), (logits,), rule)


# -- structural ---------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} along axis {axis}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node("concat", out, tensors, rule)


def take(a: Tensor, index) -> Tensor:
    """Basic or integer-array indexing (slice)."""
    x = a.data
    out = x[index]
    basic = all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis
                for i in (index if isinstance(index, tuple) else (index,)))

    def rule(g):
        gx = np.zeros_like(x)
        if basic:
            gx[index] = g
        else:
            np.add.at(gx, index, g)
        return (gx,)

    return _node("slice", np.array(out, dtype=np.float64), (a,), rule)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _node("reshape", out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is not None:
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
    else:
        inv = None
    return _node("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def one_hot(ids, depth: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    out = np.zeros(ids.shape + (depth,))
    np.put_along_axis(out, ids[..., None], 1.0, axis=-1)
    return out


def ste_one_hot(logits: Tensor) -> Tensor:
    """One-hot of the last-axis argmax forward, identity gradient backward.

    Same value and gradient as ``one_hot(argmax(y)) + y - detach(y)``. Ties go
    to the lowest index (``np.argmax`` semantics).
    """
    x = logits.data
    if np.isnan(x).any():
        raise ValueError("ste_one_hot: logits contain NaN")
    if x.shape[-1] < 1:
        raise ShapeError(f"ste_one_hot: empty last axis in {x.shape}")
    out = one_hot(np.argmax(x, axis=-1), x.shape[-1])
    return _node("ste_one_hot", out, (logits,), lambda g: (g,))


# -- verification ---------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    skipped: bool = False
    note: str = ""
    n_checked: int = 0
    worst_index: tuple[int, ...] | None = None
    nonfinite_probes: list[tuple[int, ...]] = field(default_factory=list)


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    step: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f`` at ``x`` with central differences.

    The per-entry error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    entries whose true gradient is zero from dividing noise by noise.
    Functions containing ``ste_one_hot`` are piecewise constant, so they are
    reported as skipped rather than checked.
    """
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(leaf)
        if out.data.size != 1:
            raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
        if "ste_one_hot" in tape.kinds:
            return GradCheckReport(
                math.nan, False, skipped=True,
                note="straight-through estimator: forward is piecewise constant, finite differences do not apply",
            )
        if not np.isfinite(out.data).all():
            return GradCheckReport(math.inf, False, note="f is non-finite at x", nonfinite_probes=[()])
        tape.backward(out)
    analytic = leaf.grad

    numeric = np.zeros_like(x0)
    bad: list[tuple[int, ...]] = []
    for idx in np.ndindex(x0.shape):
        xp = x0.copy()
        xp[idx] += step
        xm = x0.copy()
        xm[idx] -= step
        fp = f(Tensor(xp)).item()
        fm = f(Tensor(xm)).item()
        if not (math.isfinite(fp) and math.isfinite(fm)):
            bad.append(idx)
            continue
        numeric[idx] = (fp - fm) / (2 * step)
    if bad:
        return GradCheckReport(math.inf, False, note="f is non-finite at a probe point",
                               n_checked=x0.size - len(bad), nonfinite_probes=bad)
    err = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    worst = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else None
    max_err = float(err.max()) if err.size else 0.0
    return GradCheckReport(max_err, max_err <= tol, n_checked=x0.size, worst_index=worst)
