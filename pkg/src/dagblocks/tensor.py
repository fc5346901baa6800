"""Dense float32 tensors with a reverse-mode gradient tape.

Values are plain row-major numpy arrays wrapped in :class:`Tensor`. Every
primitive op computes its forward result eagerly and records a node on the
tape; :func:`backward` replays the nodes in reverse, accumulating gradients
into an id-addressed store. Scalars are rank-1 tensors of size one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError, TapeError


class Tensor:
    """Row-major float32 n-d array; rank >= 1, every dim >= 1."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        arr = np.ascontiguousarray(arr)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"tensor dims must be >= 1, got {list(arr.shape)}")
        self.data = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {list(self.shape)}")
        return float(self.data.reshape(-1)[0])

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)})"


def _wrap(arr: np.ndarray) -> Tensor:
    """Wrap an existing float32 array without copying."""
    t = Tensor.__new__(Tensor)
    t.data = arr
    return t


@dataclass(frozen=True)
class BackwardTransform:
    """How a block boundary rewrites the gradient flowing through it.

    ``scale(1.0)`` behaves as identity and ``negate`` as ``scale(-1.0)``.
    """

    variant: str  # "identity" | "negate" | "scale"
    factor: float = 1.0

    def __post_init__(self):
        if self.variant not in ("identity", "negate", "scale"):
            raise ValueError(f"unknown transform variant {self.variant!r}")

    @property
    def is_identity(self) -> bool:
        return self.variant == "identity" or (
            self.variant == "scale" and self.factor == 1.0
        )

    def to_dict(self) -> dict:
        if self.variant == "scale":
            return {"variant": "scale", "factor": self.factor}
        return {"variant": self.variant}

    @classmethod
    def from_dict(cls, doc: dict) -> "BackwardTransform":
        variant = doc["variant"]
        if variant == "scale":
            return cls("scale", float(doc["factor"]))
        return cls(variant)


IDENTITY = BackwardTransform("identity")
NEGATE = BackwardTransform("negate")


def _transform_array(t: BackwardTransform, g: np.ndarray) -> np.ndarray:
    if t.variant == "identity":
        return g
    if t.variant == "negate":
        return -g
    return np.float32(t.factor) * g


def apply_backward_transform(t: BackwardTransform, g: Tensor) -> Tensor:
    """Elementwise transform of a gradient tensor: identity, negation, or scaling."""
    return _wrap(np.ascontiguousarray(_transform_array(t, g.data), dtype=np.float32))


@dataclass
class TapeNode:
    op: str
    input_ids: tuple[int, ...]
    output_id: int
    # pullback maps the output gradient to one gradient per input id
    pullback: Callable[[np.ndarray], tuple]


class Tape:
    """Append-only record of primitive applications plus value/gradient stores.

    Input ids always precede output ids, so the node list is topologically
    ordered by construction. A tape is confined to one execution context.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.values: dict[int, Tensor] = {}
        self.gradients: dict[int, np.ndarray] = {}
        self._ids: dict[int, int] = {}  # id(tensor) -> value id
        self._next = 0

    def watch(self, t: Tensor) -> int:
        """Register a tensor on the tape (idempotent) and return its value id."""
        vid = self._ids.get(id(t))
        if vid is None:
            vid = self._next
            self._next += 1
            self._ids[id(t)] = vid
            self.values[vid] = t
        return vid

    def value_id(self, t: Tensor) -> int | None:
        return self._ids.get(id(t))

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, pullback) -> Tensor:
        in_ids = tuple(self.watch(t) for t in inputs)
        out_id = self.watch(output)
        self.nodes.append(TapeNode(op, in_ids, out_id, pullback))
        return output

    def grad(self, t: Tensor) -> np.ndarray | None:
        vid = self.value_id(t)
        return None if vid is None else self.gradients.get(vid)


def backward(tape: Tape, root: Tensor) -> dict[int, np.ndarray]:
    """Reverse-sweep the tape from a scalar root, summing fan-out contributions."""
    rid = tape.value_id(root)
    if rid is None:
        raise TapeError("not-on-tape", "backward root was never recorded on this tape")
    if root.size != 1:
        raise TapeError(
            "non-scalar-root",
            f"backward root must be a scalar, got shape {list(root.shape)}",
        )
    tape.gradients = {rid: np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        g = tape.gradients.get(node.output_id)
        if g is None:
            continue
        for vid, contrib in zip(node.input_ids, node.pullback(g)):
            if contrib is None:
                continue
            acc = tape.gradients.get(vid)
            tape.gradients[vid] = contrib if acc is None else acc + contrib
    return tape.gradients


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor, tape: Tape) -> Tensor:
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeError(
            f"matmul needs rank-2 operands, got {list(a.shape)} and {list(b.shape)}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dims differ: {list(a.shape)} x {list(b.shape)}"
        )
    out = _wrap(a.data @ b.data)
    ad, bd = a.data, b.data

    def pullback(g):
        # float64 accumulation keeps long reductions correctly rounded
        g64 = g.astype(np.float64)
        da = (g64 @ bd.astype(np.float64).T).astype(np.float32)
        db = (ad.astype(np.float64).T @ g64).astype(np.float32)
        return da, db

    return tape.record("matmul", (a, b), out, pullback)


def add(a: Tensor, b: Tensor, tape: Tape) -> Tensor:
    try:
        out_data = a.data + b.data
    except ValueError:
        raise ShapeError(
            f"add operands do not broadcast: {list(a.shape)} + {list(b.shape)}"
        ) from None
    out = _wrap(out_data)
    a_shape, b_shape = a.data.shape, b.data.shape

    def pullback(g):
        return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

    return tape.record("add", (a, b), out, pullback)


def mul(a: Tensor, b: Tensor, tape: Tape) -> Tensor:
    try:
        out_data = a.data * b.data
    except ValueError:
        raise ShapeError(
            f"mul operands do not broadcast: {list(a.shape)} * {list(b.shape)}"
        ) from None
    out = _wrap(out_data)
    ad, bd = a.data, b.data

    def pullback(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return tape.record("mul", (a, b), out, pullback)


def sum_all(x: Tensor, tape: Tape) -> Tensor:
    out = _wrap(x.data.sum(dtype=np.float32).reshape(1))
    shape = x.data.shape

    def pullback(g):
        return (np.full(shape, g.reshape(-1)[0], dtype=np.float32),)

    return tape.record("sum_all", (x,), out, pullback)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return np.ascontiguousarray(g, dtype=np.float32)


def relu(x: Tensor, tape: Tape) -> Tensor:
    out = _wrap(np.maximum(x.data, np.float32(0.0)))
    mask = x.data > 0  # subgradient at exactly 0 is 0

    def pullback(g):
        return (g * mask,)

    return tape.record("relu", (x,), out, pullback)


def sigmoid(x: Tensor, tape: Tape) -> Tensor:
    s = np.float32(1.0) / (np.float32(1.0) + np.exp(-x.data))
    out = _wrap(np.ascontiguousarray(s, dtype=np.float32))

    def pullback(g):
        return (g * s * (np.float32(1.0) - s),)

    return tape.record("sigmoid", (x,), out, pullback)


def tanh(x: Tensor, tape: Tape) -> Tensor:
    t = np.tanh(x.data)
    out = _wrap(np.ascontiguousarray(t, dtype=np.float32))

    def pullback(g):
        return (g * (np.float32(1.0) - t * t),)

    return tape.record("tanh", (x,), out, pullback)


def flatten(x: Tensor, tape: Tape) -> Tensor:
    if len(x.shape) < 2:
        raise ShapeError(
            f"flatten needs rank >= 2, got {list(x.shape)}", code="rank-too-low"
        )
    n = x.shape[0]
    out = _wrap(x.data.reshape(n, -1))
    shape = x.data.shape

    def pullback(g):
        return (g.reshape(shape),)

    return tape.record("flatten", (x,), out, pullback)


def concat(inputs: Sequence[Tensor], axis: int, tape: Tape) -> Tensor:
    if len(inputs) == 0:
        raise ShapeError("concat needs at least one input")
    if len(inputs) == 1:
        return inputs[0]
    rank = len(inputs[0].shape)
    if not 0 <= axis < rank:
        raise ShapeError(f"concat axis {axis} out of range for rank {rank}", code="bad-axis")
    ref = list(inputs[0].shape)
    for i, t in enumerate(inputs[1:], start=1):
        got = list(t.shape)
        if len(got) != rank or any(
            a != b for d, (a, b) in enumerate(zip(ref, got)) if d != axis
        ):
            raise ShapeError(
                f"concat input {i} has shape {got}, incompatible with {ref} on axis {axis}",
                detail={"input_index": i},
            )
    out = _wrap(np.concatenate([t.data for t in inputs], axis=axis))
    sizes = [t.shape[axis] for t in inputs]
    offsets = np.cumsum([0] + sizes)

    def pullback(g):
        grads = []
        for i in range(len(sizes)):
            idx = [slice(None)] * rank
            idx[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            grads.append(np.ascontiguousarray(g[tuple(idx)]))
        return tuple(grads)

    return tape.record("concat", tuple(inputs), out, pullback)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray, tape: Tape) -> Tensor:
    """Mean of -log softmax(logits)[label] over the batch, max-stabilized."""
    if len(logits.shape) != 2:
        raise ShapeError(f"logits must be rank 2, got {list(logits.shape)}")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.ndim != 1 or labels.shape[0] != n:
        raise ShapeError(
            f"labels must be a length-{n} vector, got shape {list(labels.shape)}"
        )
    labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= c:
        raise ShapeError(
            f"label out of range [0, {c}): {int(labels.min())}..{int(labels.max())}",
            code="label-out-of-range",
        )
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = np.float32(-logp[np.arange(n), labels].mean())
    out = _wrap(np.array([loss], dtype=np.float32))
    softmax = np.exp(logp)

    def pullback(g):
        grad = softmax.copy()
        grad[np.arange(n), labels] -= np.float32(1.0)
        grad *= g.reshape(-1)[0] / np.float32(n)
        return (grad,)

    return tape.record("softmax_cross_entropy", (logits,), out, pullback)


def grad_transform(x: Tensor, transform: BackwardTransform, tape: Tape) -> Tensor:
    """Forward identity (shared buffer); backward applies the transform.

    Always records a node, even for the identity transform, so the gradient
    arriving at the boundary stays observable as its own tape value.
    """
    out = _wrap(x.data)

    def pullback(g):
        return (_transform_array(transform, g),)

    return tape.record("grad_transform", (x,), out, pullback)


# ---------------------------------------------------------------------------
# convolution (im2col formulation)


def conv_output_hw(h: int, w: int, kernel: int, stride: int, padding: int) -> tuple[int, int]:
    out_h = (h + 2 * padding - kernel) // stride + 1
    out_w = (w + 2 * padding - kernel) // stride + 1
    return out_h, out_w


def _im2col(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    n, c, h, w = x.shape
    out_h, out_w = conv_output_hw(h, w, kernel, stride, padding)
    img = np.pad(x, [(0, 0), (0, 0), (padding, padding), (padding, padding)])
    col = np.empty((n, c, kernel, kernel, out_h, out_w), dtype=x.dtype)
    for ky in range(kernel):
        y_max = ky + stride * out_h
        for kx in range(kernel):
            x_max = kx + stride * out_w
            col[:, :, ky, kx, :, :] = img[:, :, ky:y_max:stride, kx:x_max:stride]
    return col.transpose(0, 4, 5, 1, 2, 3).reshape(n * out_h * out_w, -1)


def _col2im(col: np.ndarray, x_shape, kernel: int, stride: int, padding: int) -> np.ndarray:
    n, c, h, w = x_shape
    out_h, out_w = conv_output_hw(h, w, kernel, stride, padding)
    col = col.reshape(n, out_h, out_w, c, kernel, kernel).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h + 2 * padding + stride - 1, w + 2 * padding + stride - 1), dtype=col.dtype)
    for ky in range(kernel):
        y_max = ky + stride * out_h
        for kx in range(kernel):
            x_max = kx + stride * out_w
            img[:, :, ky:y_max:stride, kx:x_max:stride] += col[:, :, ky, kx, :, :]
    return np.ascontiguousarray(img[:, :, padding:padding + h, padding:padding + w])


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int, padding: int, tape: Tape) -> Tensor:
    """Cross-correlation with square kernel, symmetric stride/padding."""
    if len(x.shape) != 4 or len(w.shape) != 4:
        raise ShapeError(
            f"conv2d needs rank-4 input and weights, got {list(x.shape)} and {list(w.shape)}"
        )
    n, c, h, wd = x.shape
    f, wc, kh, kw = w.shape
    if kh != kw:
        raise ShapeError(f"conv2d kernel must be square, got {kh}x{kw}")
    if wc != c:
        raise ShapeError(
            f"conv2d channel mismatch: input has {c} channels, weights expect {wc}",
            code="channel-mismatch",
        )
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    if kh > h + 2 * padding or kh > wd + 2 * padding:
        raise ShapeError(
            f"kernel {kh} larger than padded input {h + 2 * padding}x{wd + 2 * padding}",
            code="kernel-too-large",
        )
    if list(b.shape) != [f]:
        raise ShapeError(f"conv2d bias must have shape [{f}], got {list(b.shape)}")
    out_h, out_w = conv_output_hw(h, wd, kh, stride, padding)
    cols = _im2col(x.data, kh, stride, padding)          # (N*H'*W', C*k*k)
    wmat = w.data.reshape(f, -1).T                        # (C*k*k, F)
    out2d = cols @ wmat + b.data
    out = _wrap(np.ascontiguousarray(
        out2d.reshape(n, out_h, out_w, f).transpose(0, 3, 1, 2)
    ))
    x_shape = x.data.shape

    def pullback(g):
        # float64 accumulation keeps the many-term reductions correctly rounded
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, f).astype(np.float64)
        db = g2.sum(axis=0).astype(np.float32)
        dw = (cols.astype(np.float64).T @ g2).T.reshape(f, c, kh, kw).astype(np.float32)
        dx = _col2im(g2 @ wmat.astype(np.float64).T, x_shape, kh, stride, padding)
        return dx.astype(np.float32), np.ascontiguousarray(dw), np.ascontiguousarray(db)

    return tape.record("conv2d", (x, w, b), out, pullback)
