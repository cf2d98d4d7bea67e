"""Minimal reverse-mode automatic differentiation over numpy arrays.

Values live in float64 :class:`Tensor` objects.  While a :class:`Tape` is
active (see :func:`recording`), differentiable operations append one record
each, in execution order — which is a topological order of the data-flow
graph.  :func:`backward` walks the records once in reverse and accumulates
gradients into every leaf tensor that was created with ``requires_grad=True``.

Gradients accumulate across calls: ``backward`` adds into ``Tensor.grad``
without zeroing, so callers reset grads between steps via ``zero_grad``.

Operations only compute gradients for inputs that require them, so feeding a
plain data batch through ``matmul``/``conv2d`` never pays for an input
gradient.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ShapeError

Array = np.ndarray


class Tensor:
    """A float64 array with an optional accumulated gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


@dataclass
class TapeRecord:
    """One recorded operation: differentiable input node ids, output node id,
    and a rule mapping the output gradient to one gradient per listed input."""

    inputs: tuple[int, ...]
    output: int
    backward: Callable[[Array], tuple[Array, ...]]


class Tape:
    """Ordered log of differentiable operations plus the node-id registry."""

    def __init__(self) -> None:
        self.records: list[TapeRecord] = []
        self._tensors: list[Tensor] = []          # node id -> tensor (strong refs)
        self._ids: dict[int, int] = {}            # id(tensor) -> node id
        self._leaves: dict[int, Tensor] = {}      # node id -> leaf tensor

    def node_id(self, t: Tensor) -> int:
        nid = self._ids.get(id(t))
        if nid is None:
            nid = len(self._tensors)
            self._tensors.append(t)
            self._ids[id(t)] = nid
            if t.requires_grad:
                self._leaves[nid] = t
        return nid

    def knows(self, t: Tensor) -> bool:
        return id(t) in self._ids


_ACTIVE: list[Tape] = []


@contextmanager
def recording(tape: Tape | None = None) -> Iterator[Tape]:
    """Activate a tape for the duration of the ``with`` block."""
    t = tape if tape is not None else Tape()
    _ACTIVE.append(t)
    try:
        yield t
    finally:
        _ACTIVE.pop()


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(out: Tensor, diff_inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Record ``out = op(...)`` if a tape is active and any input needs grads.

    ``backward`` must return one gradient per entry of ``diff_inputs``.
    """
    tape = active_tape()
    if tape is None or not diff_inputs:
        return out
    in_ids = tuple(tape.node_id(t) for t in diff_inputs)
    out.requires_grad = True
    out_id = tape.node_id(out)
    tape.records.append(TapeRecord(in_ids, out_id, backward))
    return out


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into every leaf's ``.grad``.

    Walks the tape once in reverse; each record is visited at most once.
    """
    tape = tape if tape is not None else active_tape()
    if tape is None:
        raise ValueError("backward() needs an active tape or an explicit one")
    if loss.size != 1:
        raise ValueError(f"backward() expects a scalar loss, got shape {loss.shape}")
    if not tape.knows(loss):
        raise ValueError("loss tensor was never recorded on this tape")

    grads: dict[int, Array] = {tape.node_id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.pop(rec.output, None)
        if g is None:
            continue
        for nid, gin in zip(rec.inputs, rec.backward(g)):
            if nid in grads:
                grads[nid] = grads[nid] + gin
            else:
                grads[nid] = gin
    for nid, leaf in tape._leaves.items():
        g = grads.get(nid)
        if g is None:
            continue
        if leaf.grad is None:
            leaf.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            leaf.grad = leaf.grad + g


# ---------------------------------------------------------------------------
# elementwise / shape ops
# ---------------------------------------------------------------------------


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data + b.data)
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    diff = [t for t in (a, b) if _needs_grad(t)]

    def rule(g: Array):
        return tuple(_unbroadcast(g, t.shape) for t in diff)

    return _emit(out, diff, rule)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data * b.data)
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    ad, bd = a.data, b.data
    diff = [t for t in (a, b) if _needs_grad(t)]

    def rule(g: Array):
        outs = []
        for t in diff:
            other = bd if t is a else ad
            outs.append(_unbroadcast(g * other, t.shape))
        return tuple(outs)

    return _emit(out, diff, rule)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0))
    if not _needs_grad(x):
        return out
    gate = x.data > 0.0  # subgradient 0 at the kink

    def rule(g: Array):
        return (g * gate,)

    return _emit(out, [x], rule)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    if not _needs_grad(x):
        return out
    orig = x.shape

    def rule(g: Array):
        return (g.reshape(orig),)

    return _emit(out, [x], rule)


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.sum())
    if not _needs_grad(x):
        return out
    shape = x.shape

    def rule(g: Array):
        return (np.broadcast_to(g, shape).astype(np.float64),)

    return _emit(out, [x], rule)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data
    diff = [t for t in (a, b) if _needs_grad(t)]

    def rule(g: Array):
        outs = []
        for t in diff:
            if t is a:
                outs.append(g @ bd.T)
            else:
                outs.append(ad.T @ g)
        return tuple(outs)

    return _emit(out, diff, rule)


# ---------------------------------------------------------------------------
# convolution / pooling
# ---------------------------------------------------------------------------


def _im2col(x: Array, kh: int, kw: int, stride: int) -> tuple[Array, int, int]:
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    s0, s1, s2, s3 = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, (n, c, oh, ow, kh, kw), (s0, s1, s2 * stride, s3 * stride, s2, s3)
    )
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * oh * ow, c * kh * kw
    )
    return cols, oh, ow


def _col2im(dcols: Array, xshape: tuple[int, ...], kh: int, kw: int,
            stride: int, oh: int, ow: int) -> Array:
    n, c, h, w = xshape
    dx = np.zeros(xshape, dtype=np.float64)
    dcols = dcols.reshape(n, oh, ow, c, kh, kw)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + oh * stride:stride, j:j + ow * stride:stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return dx


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (N,C,H,W) inputs with an (F,C,kh,kw) kernel."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(
            f"conv2d: expects (N,C,H,W) and (F,C,kh,kw), got {x.shape} and {kernel.shape}"
        )
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if ck != c:
        raise ShapeError(f"conv2d: channel mismatch: input {c}, kernel {ck}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: bad stride/padding ({stride}, {padding})")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(
            f"conv2d: kernel ({kh}x{kw}) larger than padded input ({hp}x{wp})"
        )
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols, oh, ow = _im2col(xp, kh, kw, stride)
    kflat = kernel.data.reshape(f, c * kh * kw)
    out = Tensor((cols @ kflat.T).reshape(n, oh, ow, f).transpose(0, 3, 1, 2))

    diff = [t for t in (x, kernel) if _needs_grad(t)]
    if not diff:
        return out
    xshape_p = xp.shape

    def rule(g: Array):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
        outs = []
        for t in diff:
            if t is kernel:
                outs.append((gmat.T @ cols).reshape(kernel.shape))
            else:
                dxp = _col2im(gmat @ kflat, xshape_p, kh, kw, stride, oh, ow)
                if padding:
                    dxp = dxp[:, :, padding:-padding, padding:-padding]
                outs.append(dxp)
        return tuple(outs)

    return _emit(out, diff, rule)


def maxpool2d(x, window: int) -> Tensor:
    """Non-overlapping max pooling; ties route the gradient to the first
    maximum in row-major window order."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d: expects (N,C,H,W), got {x.shape}")
    n, c, h, w = x.shape
    if window < 1 or h % window or w % window:
        raise ShapeError(
            f"maxpool2d: window {window} does not divide spatial extents {h}x{w}"
        )
    oh, ow = h // window, w // window
    v = x.data.reshape(n, c, oh, window, ow, window).transpose(0, 1, 2, 4, 3, 5)
    v = np.ascontiguousarray(v).reshape(n, c, oh, ow, window * window)
    idx = v.argmax(axis=-1)
    out = Tensor(np.take_along_axis(v, idx[..., None], axis=-1)[..., 0])
    if not _needs_grad(x):
        return out

    def rule(g: Array):
        dv = np.zeros((n, c, oh, ow, window * window), dtype=np.float64)
        np.put_along_axis(dv, idx[..., None], g[..., None], axis=-1)
        dx = dv.reshape(n, c, oh, ow, window, window).transpose(0, 1, 2, 4, 3, 5)
        return (dx.reshape(n, c, h, w),)

    return _emit(out, [x], rule)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of row-softmax(logits) against integer labels.

    Stabilized by per-row max subtraction; backward is (softmax - onehot)/N.
    """
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be (N,K), got {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(
            f"softmax_cross_entropy: labels shape {labels.shape} != ({n},)"
        )
    if labels.dtype.kind not in "iu":
        raise ValueError("softmax_cross_entropy: labels must be integers")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(
            f"softmax_cross_entropy: label out of range [0, {k}): "
            f"min {labels.min()}, max {labels.max()}"
        )
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    lse = np.log(ez.sum(axis=1))
    out = Tensor(np.mean(lse - z[rows, labels]))
    if not _needs_grad(logits):
        return out

    def rule(g: Array):
        d = p.copy()
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return _emit(out, [logits], rule)


def mse_loss(pred, target) -> Tensor:
    """Mean of squared elementwise differences."""
    pred = _as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes differ: {pred.shape} vs {target.shape}")
    diffv = pred.data - target
    out = Tensor(np.mean(diffv * diffv))
    if not _needs_grad(pred):
        return out

    def rule(g: Array):
        return (diffv * (2.0 * g / diffv.size),)

    return _emit(out, [pred], rule)
