"""Dense float64 tensors with tape-based reverse-mode differentiation.

Forward ops optionally record themselves on a Tape; `backward` replays the
tape once in reverse order and returns gradients for watched leaves. Scope
is deliberately the minimum an MLP robustness lab needs: affine layers,
relu/tanh, a scale-aware softmax cross-entropy, and two reductions.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ParameterError, ShapeError

ACTIVATION_KINDS = ("relu", "tanh")


class Tensor:
    """Immutable dense array of 64-bit floats.

    Construction from user data validates finiteness; op outputs go through
    the trusted `_wrap` path and may hold whatever finite or infinite values
    the arithmetic produced (e.g. a saturated cross-entropy).
    """

    __slots__ = ("_data",)

    def __init__(self, values) -> None:
        arr = np.array(values, dtype=np.float64, order="C")
        if arr.size and not np.all(np.isfinite(arr)):
            raise ParameterError("tensor values must be finite (no NaN/Inf)")
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Trusted constructor for op outputs. Takes ownership: the caller
        # must not mutate `arr` afterwards.
        out = cls.__new__(cls)
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim and not a.flags["C_CONTIGUOUS"]:
            # ascontiguousarray would promote 0-d arrays to 1-d
            a = np.ascontiguousarray(a)
        a.setflags(write=False)
        out._data = a
        return out

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def item(self) -> float:
        return float(self._data.reshape(-1)[0]) if self._data.size == 1 else self._fail_item()

    def _fail_item(self):
        raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")

    def tolist(self):
        return self._data.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class Tape:
    """Wengert list: primitive ops recorded in forward order.

    Backward replays the records exactly once, in reverse. A tape is
    single-threaded; use one tape per worker.
    """

    __slots__ = ("_records", "_watched")

    def __init__(self) -> None:
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._watched: dict[int, Tensor] = {}

    def watch(self, tensor: Tensor) -> Tensor:
        """Mark a leaf whose gradient `backward` should report."""
        self._watched[id(tensor)] = tensor
        return tensor

    def _record(self, output: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        self._records.append((output, inputs, vjp))

    def __len__(self) -> int:
        return len(self._records)


class Gradient:
    """Gradients of one scalar loss with respect to watched leaves."""

    __slots__ = ("_grads",)

    def __init__(self, grads: dict[int, Tensor]) -> None:
        self._grads = grads

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[Tensor, np.ndarray]]) -> "Gradient":
        """Build a Gradient from explicit (leaf, gradient-array) pairs."""
        grads = {}
        for leaf, arr in pairs:
            g = np.asarray(arr, dtype=np.float64)
            if g.shape != leaf.shape:
                raise ShapeError(f"gradient shape {g.shape} does not match leaf shape {leaf.shape}")
            grads[id(leaf)] = Tensor._wrap(g.copy())
        return cls(grads)

    def wrt(self, leaf: Tensor) -> Tensor:
        try:
            return self._grads[id(leaf)]
        except KeyError:
            raise ContractError("gradient requested for a tensor that was not watched on the tape") from None


def linear(x: Tensor, weight: Tensor, bias: Tensor, tape: Tape | None = None) -> Tensor:
    """Affine map: rows of `x` times `weight`, plus `bias`."""
    xd, wd, bd = x.data, weight.data, bias.data
    if xd.ndim != 2 or wd.ndim != 2 or bd.ndim != 1:
        raise ShapeError(
            f"linear expects 2-d input, 2-d weight, 1-d bias; got {xd.shape}, {wd.shape}, {bd.shape}"
        )
    if xd.shape[1] != wd.shape[0] or wd.shape[1] != bd.shape[0]:
        raise ShapeError(
            f"linear shapes do not conform: input {xd.shape} x weight {wd.shape} + bias {bd.shape}"
        )
    # einsum (not BLAS matmul) keeps each output row's summation order
    # independent of batch size, so batch results are bit-identical to
    # per-example results.
    out = Tensor._wrap(np.einsum("ij,jk->ik", xd, wd) + bd)
    if tape is not None:
        def vjp(g: np.ndarray):
            return g @ wd.T, xd.T @ g, g.sum(axis=0)

        tape._record(out, (x, weight, bias), vjp)
    return out


def activation(x: Tensor, kind: str, tape: Tape | None = None) -> Tensor:
    """Elementwise relu or tanh. relu uses subgradient 0 at exactly 0."""
    if kind == "relu":
        out = Tensor._wrap(np.maximum(x.data, 0.0))
        if tape is not None:
            mask = x.data > 0.0
            tape._record(out, (x,), lambda g: (g * mask,))
    elif kind == "tanh":
        out = Tensor._wrap(np.tanh(x.data))
        if tape is not None:
            od = out.data
            tape._record(out, (x,), lambda g: (g * (1.0 - od * od),))
    else:
        raise ParameterError(f"unknown activation kind {kind!r}; expected one of {ACTIVATION_KINDS}")
    return out


def _check_alpha(alpha: float) -> float:
    a = float(alpha)
    if not np.isfinite(a) or a <= 0.0:
        raise ParameterError(f"alpha must be a positive finite scalar, got {alpha!r}")
    return a


def _check_logits(logits: Tensor) -> np.ndarray:
    ld = logits.data
    if ld.ndim != 2 or ld.shape[1] < 1:
        raise ShapeError(f"logits must have shape (n, C), got {ld.shape}")
    return ld


def _log_softmax(logits: np.ndarray, alpha: float) -> np.ndarray:
    # Stabilized by max-subtraction so exp() stays in [0, 1] even when the
    # scale pushes logits far apart (the sweep goes up to alpha = 100).
    shifted = alpha * (logits - logits.max(axis=1, keepdims=True))
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - lse


def scaled_softmax(logits: Tensor, alpha: float = 1.0) -> Tensor:
    """Row-wise softmax of `alpha * logits`. Forward only (never taped)."""
    a = _check_alpha(alpha)
    ld = _check_logits(logits)
    return Tensor._wrap(np.exp(_log_softmax(ld, a)))


def _check_labels(labels, n: int, num_classes: int) -> np.ndarray:
    lab = np.asarray(labels)
    if lab.ndim != 1 or lab.shape[0] != n:
        raise ShapeError(f"labels must be a length-{n} vector, got shape {lab.shape}")
    if not np.issubdtype(lab.dtype, np.integer):
        raise ParameterError(f"labels must be integers, got dtype {lab.dtype}")
    if lab.size and (lab.min() < 0 or lab.max() >= num_classes):
        raise IndexError(f"label out of range [0, {num_classes})")
    return lab.astype(np.int64, copy=False)


def scaled_softmax_cross_entropy(
    logits: Tensor, labels, alpha: float = 1.0, tape: Tape | None = None
) -> Tensor:
    """Per-example loss -log softmax(alpha * logits)[label].

    Returns a length-n tensor; reduce it with `sum_all` or `weighted_mean`
    before calling `backward`.
    """
    a = _check_alpha(alpha)
    ld = _check_logits(logits)
    n, num_classes = ld.shape
    lab = _check_labels(labels, n, num_classes)
    logp = _log_softmax(ld, a)
    rows = np.arange(n)
    losses = Tensor._wrap(-logp[rows, lab])
    if tape is not None:
        probs = np.exp(logp)

        def vjp(g: np.ndarray):
            d = probs.copy()
            d[rows, lab] -= 1.0
            return (a * d * g[:, None],)

        tape._record(losses, (logits,), vjp)
    return losses


def sum_all(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = Tensor._wrap(np.asarray(x.data.sum()))
    if tape is not None:
        shape = x.data.shape
        tape._record(out, (x,), lambda g: (np.full(shape, float(g)),))
    return out


def weighted_mean(x: Tensor, weights, tape: Tape | None = None) -> Tensor:
    """(1/n) * sum_i weights[i] * x[i]; the weights are constants."""
    xd = x.data
    w = np.asarray(weights.data if isinstance(weights, Tensor) else weights, dtype=np.float64)
    if xd.ndim != 1 or w.shape != xd.shape:
        raise ShapeError(f"weighted_mean needs matching 1-d vectors, got {xd.shape} and {w.shape}")
    n = xd.shape[0]
    if n == 0:
        raise ShapeError("weighted_mean of an empty vector")
    out = Tensor._wrap(np.asarray((w * xd).sum() / n))
    if tape is not None:
        tape._record(out, (x,), lambda g: (float(g) * w / n,))
    return out


def backward(tape: Tape, loss: Tensor) -> Gradient:
    """Replay the tape once in reverse; gradients for all watched leaves.

    Leaves that the loss does not reach get zero gradients of matching
    shape. The replay is a plain reversed loop over the recorded ops, so
    two runs over identical forward passes are bit-identical.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    partial: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, vjp in reversed(tape._records):
        g = partial.get(id(out))
        if g is None:
            continue
        for tensor, contrib in zip(inputs, vjp(g)):
            if contrib is None:
                continue
            prev = partial.get(id(tensor))
            partial[id(tensor)] = contrib if prev is None else prev + contrib
    grads: dict[int, Tensor] = {}
    for key, leaf in tape._watched.items():
        g = partial.get(key)
        grads[key] = Tensor._wrap(g if g is not None else np.zeros_like(leaf.data))
    return Gradient(grads)
