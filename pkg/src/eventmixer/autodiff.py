"""Minimal dense reverse-mode kernel: tape, matrix ops, MLPs, SGD.

Values are numpy arrays wrapped in :class:`Var`. Operations take an
optional :class:`Tape`; when given, each op records a closure that reads
the output's gradient and accumulates into its inputs' gradients. The
tape replays closures in exact reverse order. Only the operation set the
network needs is provided; there is no general-purpose graph engine.

Feature matrices are (rows=nodes, cols=channels), float64 by default;
:func:`set_default_dtype` switches new values to float32 for speed runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError
from .graph import IndexMap, InverseIndexMap

_default_dtype = np.float64


def set_default_dtype(name: str) -> None:
    global _default_dtype
    if name in ("f64", "float64"):
        _default_dtype = np.float64
    elif name in ("f32", "float32"):
        _default_dtype = np.float32
    else:
        raise ShapeError(f"unknown dtype {name!r}")


def default_dtype():
    return _default_dtype


def assert_finite(value: np.ndarray, context: str = "value") -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite {context} detected")


class Var:
    """A value in the computation: numpy array plus gradient slot."""

    __slots__ = ("value", "grad")

    def __init__(self, value, dtype=None):
        self.value = np.asarray(value, dtype=dtype or _default_dtype)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape}, dtype={self.value.dtype})"


def _accum(v: Var, g: np.ndarray) -> None:
    if v.grad is None:
        v.grad = g.copy()
    else:
        v.grad += g


class Tape:
    """Recorded backward steps, replayed in reverse."""

    def __init__(self):
        self._steps: list[Callable[[], None]] = []

    def record(self, step: Callable[[], None]) -> None:
        self._steps.append(step)

    def __len__(self) -> int:
        return len(self._steps)

    def backward(self, root: Var, seed: np.ndarray | float = 1.0) -> None:
        """Seed the root gradient and propagate through all recorded steps."""
        g = np.broadcast_to(np.asarray(seed, dtype=root.value.dtype), root.value.shape)
        _accum(root, g)  # _accum copies, preserving 0-d shapes
        for step in reversed(self._steps):
            step()


# ---------------------------------------------------------------------------
# Elementwise and dense ops
# ---------------------------------------------------------------------------


def matmul(a: Var, w: Var, tape: Tape | None) -> Var:
    if a.value.ndim != 2 or w.value.ndim != 2:
        raise ShapeError(f"matmul expects 2D operands, got {a.value.shape} @ {w.value.shape}")
    if a.value.shape[-1] != w.value.shape[0]:
        raise ShapeError(f"matmul: {a.value.shape} @ {w.value.shape}")
    out = Var(a.value @ w.value)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(a, out.grad @ w.value.T)
            _accum(w, a.value.T @ out.grad)
        tape.record(backward)
    return out


def add_bias(x: Var, b: Var, tape: Tape | None) -> Var:
    if x.value.shape[-1] != b.value.shape[-1]:
        raise ShapeError(f"add_bias: {x.value.shape} + {b.value.shape}")
    out = Var(x.value + b.value)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad)
            _accum(b, out.grad.reshape(-1, out.grad.shape[-1]).sum(axis=0))
        tape.record(backward)
    return out


def add(a: Var, b: Var, tape: Tape | None) -> Var:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add: {a.value.shape} vs {b.value.shape}")
    out = Var(a.value + b.value)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(a, out.grad)
            _accum(b, out.grad)
        tape.record(backward)
    return out


def relu(x: Var, tape: Tape | None) -> Var:
    out = Var(np.maximum(x.value, 0.0))
    if tape is not None:
        mask = x.value > 0.0
        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad * mask)
        tape.record(backward)
    return out


def tanh(x: Var, tape: Tape | None) -> Var:
    out = Var(np.tanh(x.value))
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad * (1.0 - out.value * out.value))
        tape.record(backward)
    return out


ACTIVATIONS: dict[str, Callable[[Var, Tape | None], Var]] = {
    "relu": relu,
    "tanh": tanh,
    "identity": lambda x, tape: x,
}


def reshape(x: Var, shape: tuple[int, ...], tape: Tape | None) -> Var:
    out = Var(x.value.reshape(shape))
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad.reshape(x.value.shape))
        tape.record(backward)
    return out


def softmax_rows(x: Var, tape: Tape | None, mask: np.ndarray | None = None) -> Var:
    """Numerically safe softmax along axis 1.

    Works on (n, k) score matrices and (n, k, c) per-channel scores.
    ``mask`` (n, k) marks valid entries; masked entries get exactly zero
    weight (their scores are treated as -inf), so padded rows reproduce
    the unpadded result bit for bit.
    """
    v = x.value
    if mask is not None:
        m = mask if v.ndim == 2 else mask[:, :, None]
        v = np.where(m, v, -np.inf)
    mx = np.max(v, axis=1, keepdims=True)
    e = np.exp(v - mx)
    s = e.sum(axis=1, keepdims=True)
    out = Var(e / s)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            g = out.grad
            inner = (g * out.value).sum(axis=1, keepdims=True)
            _accum(x, out.value * (g - inner))
        tape.record(backward)
    return out


def matmul_rows_slice(a: Var, w: Var, lo: int, hi: int, tape: Tape | None) -> Var:
    """a @ w[lo:hi], with the weight gradient accumulated into that slice.

    Lets a single affine layer over concatenated inputs be split into one
    matmul per input half: concat([a, b]) @ w == a @ w[:ca] + b @ w[ca:],
    avoiding the concatenated intermediate.
    """
    if a.value.ndim != 2 or w.value.ndim != 2:
        raise ShapeError(f"matmul_rows_slice expects 2D operands, got {a.value.shape}, {w.value.shape}")
    if not 0 <= lo < hi <= w.value.shape[0] or a.value.shape[1] != hi - lo:
        raise ShapeError(f"slice [{lo}:{hi}] of {w.value.shape} vs input {a.value.shape}")
    sub = w.value[lo:hi]
    out = Var(a.value @ sub)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(a, out.grad @ sub.T)
            gw = np.zeros_like(w.value)
            gw[lo:hi] = a.value.T @ out.grad
            _accum(w, gw)
        tape.record(backward)
    return out


def concat_cols(a: Var, b: Var, tape: Tape | None) -> Var:
    if a.value.shape[0] != b.value.shape[0]:
        raise ShapeError(f"concat_cols: {a.value.shape} vs {b.value.shape}")
    na = a.value.shape[1]
    out = Var(np.concatenate([a.value, b.value], axis=1))
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(a, out.grad[:, :na])
            _accum(b, out.grad[:, na:])
        tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# Index-map ops
# ---------------------------------------------------------------------------


def _rows_of(index_rows) -> np.ndarray:
    return index_rows.rows if isinstance(index_rows, IndexMap) else np.asarray(index_rows)


def gather_rows(x: Var, index_rows, tape: Tape | None) -> Var:
    """Stack neighbor rows: output[i, r] = x[rows[i, r]], shape (n, k, c)."""
    rows = _rows_of(index_rows)
    if rows.size and (rows.min() < 0 or rows.max() >= x.value.shape[0]):
        raise ShapeError(f"gather_rows: index {rows.max()} out of {x.value.shape[0]} rows")
    out = Var(x.value[rows])
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            g = np.zeros_like(x.value)
            np.add.at(g, rows.ravel(), out.grad.reshape(-1, x.value.shape[1]))
            _accum(x, g)
        tape.record(backward)
    return out


def scatter_sum_rows(y: np.ndarray, index_rows, out_rows: int) -> np.ndarray:
    """Adjoint of gather_rows on plain arrays: sum blocks back to rows."""
    rows = _rows_of(index_rows)
    out = np.zeros((out_rows, y.shape[-1]), dtype=y.dtype)
    np.add.at(out, rows.ravel(), y.reshape(-1, y.shape[-1]))
    return out


def neighbor_mean(x: Var, index_rows, tape: Tape | None, mask: np.ndarray | None = None) -> Var:
    """Mean of neighbor rows per query: output[i] = mean_r x[rows[i, r]]."""
    rows = _rows_of(index_rows)
    gathered = x.value[rows]  # (n, k, c)
    if mask is None:
        counts = np.full(rows.shape[0], rows.shape[1], dtype=x.value.dtype)
        summed = gathered.sum(axis=1)
    else:
        counts = mask.sum(axis=1).astype(x.value.dtype)
        summed = (gathered * mask[:, :, None]).sum(axis=1)
    out = Var(summed / np.maximum(counts, 1.0)[:, None])
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            per = out.grad / np.maximum(counts, 1.0)[:, None]
            g = np.zeros_like(x.value)
            if mask is None:
                contrib = np.repeat(per, rows.shape[1], axis=0)
                np.add.at(g, rows.ravel(), contrib)
            else:
                contrib = np.repeat(per, rows.shape[1], axis=0) * mask.ravel()[:, None]
                np.add.at(g, rows.ravel(), contrib)
            _accum(x, g)
        tape.record(backward)
    return out


def weighted_neighbor_sum(weights: Var, values: Var, tape: Tape | None) -> Var:
    """Per-query weighted sum of gathered neighbor values.

    ``weights`` is (n, k) for one scalar weight per neighbor, or (n, k, c)
    for per-channel weighting; ``values`` is (n, k, c). Output is (n, c).
    """
    w = weights.value
    v = values.value
    if w.shape[:2] != v.shape[:2]:
        raise ShapeError(f"weighted_neighbor_sum: {w.shape} vs {v.shape}")
    wb = w[:, :, None] if w.ndim == 2 else w
    out = Var((wb * v).sum(axis=1))
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            g = out.grad[:, None, :]
            _accum(values, wb * g)
            gw = v * g
            _accum(weights, gw.sum(axis=2) if w.ndim == 2 else gw)
        tape.record(backward)
    return out


def scatter_mean(
    x: Var,
    inverse: InverseIndexMap,
    tape: Tape | None,
    fallback: np.ndarray | None = None,
) -> Var:
    """Mean of contributing rows per inverse list.

    output[j] = mean over i in inverse list j of x[i]; empty lists yield a
    zero row, or x[fallback[j]] when a fallback index array is supplied
    (used by the upsampling path for nodes no sampled set covers).
    """
    counts = inverse.counts()
    dst = np.repeat(np.arange(inverse.domain_size, dtype=np.int64), counts)
    src = inverse.values
    denom = np.maximum(counts, 1).astype(x.value.dtype)
    out_val = np.zeros((inverse.domain_size, x.value.shape[1]), dtype=x.value.dtype)
    np.add.at(out_val, dst, x.value[src])
    out_val /= denom[:, None]
    empty = counts == 0
    if fallback is not None and empty.any():
        out_val[empty] = x.value[fallback[empty]]
    out = Var(out_val)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            g = np.zeros_like(x.value)
            scaled = out.grad / denom[:, None]
            np.add.at(g, src, scaled[dst])
            if fallback is not None and empty.any():
                np.add.at(g, fallback[empty], out.grad[empty])
            _accum(x, g)
        tape.record(backward)
    return out


def permute_rows(x: Var, destination: np.ndarray, tape: Tape | None) -> Var:
    """Reorder rows so that output[destination[i]] = x[i]."""
    inv = np.empty(len(destination), dtype=np.int64)
    inv[destination] = np.arange(len(destination))
    out = Var(x.value[inv])
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad[destination])
        tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# MLPs
# ---------------------------------------------------------------------------


@dataclass
class MlpParams:
    """A stack of affine layers with a shared activation.

    ``activate_last=False`` leaves the final layer linear (score heads,
    logit heads). Layer dimensions must chain.
    """

    weights: list[Var]
    biases: list[Var]
    activation: str = "relu"
    activate_last: bool = True

    @property
    def in_dim(self) -> int:
        return self.weights[0].value.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].value.shape[1]

    def parameter_count(self) -> int:
        return sum(w.value.size + b.value.size for w, b in zip(self.weights, self.biases))


def init_mlp(
    dims: Sequence[int],
    rng: np.random.Generator,
    activation: str = "relu",
    activate_last: bool = True,
) -> MlpParams:
    """Seeded uniform initialization, zero biases.

    Layers whose output passes through ReLU use the gain-corrected bound
    sqrt(6/fan_in) (ReLU halves activation variance; plain fan-average
    bounds shrink activations layer over layer and stall training at
    small learning rates). Other layers use sqrt(6/(fan_in+fan_out)).
    """
    if len(dims) < 2:
        raise ShapeError("an MLP needs at least one layer")
    weights, biases = [], []
    last = len(dims) - 2
    for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
        through_relu = activation == "relu" and (i < last or activate_last)
        bound = math.sqrt(6.0 / din) if through_relu else math.sqrt(6.0 / (din + dout))
        weights.append(Var(rng.uniform(-bound, bound, size=(din, dout))))
        biases.append(Var(np.zeros(dout)))
    return MlpParams(weights, biases, activation, activate_last)


def mlp_forward(params: MlpParams, x: Var, tape: Tape | None) -> Var:
    """Row-wise affine + activation per layer (pointwise: no neighbor mixing)."""
    if params.activation not in ACTIVATIONS:
        raise ShapeError(f"unknown activation {params.activation!r}")
    act = ACTIVATIONS[params.activation]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = add_bias(matmul(h, w, tape), b, tape)
        if i < last or params.activate_last:
            h = act(h, tape)
    return h


def neighborhood_mlp_forward(
    params: MlpParams,
    x: Var,
    index_map: IndexMap,
    tape: Tape | None,
    normalization: str = "mean",
) -> Var:
    """MLP where every layer first aggregates each node's neighbor rows.

    ``normalization="mean"`` divides the neighbor sum by the neighborhood
    size; ``"sym"`` uses symmetric degree normalization 1/sqrt(d_i d_j)
    with d = row length (an alternative reading of the per-edge factor).
    """
    if index_map.rows.shape[0] != x.value.shape[0]:
        raise ShapeError("index map rows must match input rows")
    act = ACTIVATIONS[params.activation]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if normalization in ("mean", "sym"):
            # rows are uniform length, so symmetric degree 1/sqrt(d_i d_j)
            # coincides with the mean 1/d; both route through neighbor_mean
            agg = neighbor_mean(h, index_map, tape)
        else:
            raise ShapeError(f"unknown normalization {normalization!r}")
        h = add_bias(matmul(agg, w, tape), b, tape)
        if i < last or params.activate_last:
            h = act(h, tape)
    return h


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class SgdState:
    """SGD with momentum and coupled weight decay.

    Update: v <- momentum*v + (g + weight_decay*theta); theta <- theta - lr*v.
    """

    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    velocities: list[np.ndarray] = field(default_factory=list)


def sgd_step(params: Sequence[Var], state: SgdState, grads: Sequence[np.ndarray] | None = None) -> None:
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]
    if not state.velocities:
        state.velocities = [np.zeros_like(p.value) for p in params]
    if len(grads) != len(params) or len(state.velocities) != len(params):
        raise ShapeError("parameter/gradient/velocity counts differ")
    for p, g, v in zip(params, grads, state.velocities):
        if g.shape != p.value.shape or v.shape != p.value.shape:
            raise ShapeError(f"gradient shape {g.shape} vs parameter {p.value.shape}")
        v *= state.momentum
        v += g + state.weight_decay * p.value
        p.value -= state.lr * v
