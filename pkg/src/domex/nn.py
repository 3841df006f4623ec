"""Minimal reverse-mode differentiation engine and the layers both stages need.

Tensors wrap dense numpy arrays and build a dynamic graph op by op; each op
records a backward closure, and ``backward()`` walks the graph in reverse
topological order.  The engine is deliberately small: embeddings, 1-D
convolution with max-over-time pooling, uni/bi-directional LSTM, dense
layers, softmax cross-entropy, dropout, and Adam.  No broadcasting beyond
what those layers need.

Arrays are 64-bit by default (training / gradient-check mode); call
:func:`set_default_dtype` with ``numpy.float32`` for the faster 32-bit mode.
Every op asserts its output is finite and raises
:class:`~domex.errors.NonFiniteValue` naming the op otherwise.
"""

from __future__ import annotations

import json
import struct
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import IndexOutOfRange, NonFiniteValue, ShapeMismatch

_DEFAULT_DTYPE = np.float64
_NAN_GUARD = True
_GRAD_ENABLED = True

CHECKPOINT_MAGIC = b"DOMEX-CKPT-1\n"


def set_default_dtype(dtype) -> None:
    """Select 64-bit (default) or 32-bit tensor storage for new tensors."""
    global _DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError("supported dtypes are float32 and float64")
    _DEFAULT_DTYPE = dtype


def default_dtype():
    return _DEFAULT_DTYPE


def set_nan_guard(enabled: bool) -> None:
    global _NAN_GUARD
    _NAN_GUARD = bool(enabled)


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not _NAN_GUARD:
        return
    # fast path: a finite sum implies finite elements at our value scales;
    # confirm with the exact check before raising
    if not np.isfinite(arr.sum()) and not np.isfinite(arr).all():
        raise NonFiniteValue(op)


class Tensor:
    """A dense array plus the graph edges needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_prev", "_backward")

    def __init__(self, data, *, requires_grad: bool = False, op: str = "leaf"):
        arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        _check_finite(arr, op)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._prev: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from this (scalar) tensor through the graph."""
        if self.data.shape != ():
            raise ShapeMismatch("backward() requires a scalar tensor")
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
            for parent in node._prev:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, op={self.op!r})"


class Parameter(Tensor):
    """A named trainable tensor with a persistent gradient buffer."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True, op=f"param:{name}")
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _make(data: np.ndarray, prev: tuple[Tensor, ...], op: str, backward) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in prev):
        out.requires_grad = True
        out._prev = prev
        out._backward = backward
    else:
        out.requires_grad = False
        out._prev = ()
        out._backward = None
    return out


def constant(data) -> Tensor:
    """Wrap an array as a non-trainable leaf (e.g. frozen stage-1 vectors)."""
    return Tensor(data, requires_grad=False, op="constant")


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; also supports adding a [d] row bias to an [n, d]."""
    broadcast = a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]
    if not broadcast and a.data.shape != b.data.shape:
        raise ShapeMismatch(f"add: {a.data.shape} vs {b.data.shape}")
    data = a.data + b.data

    def backward(g):
        a._accumulate(g)
        b._accumulate(g.sum(axis=0) if broadcast else g)

    return _make(data, (a, b), "add", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"mul: {a.data.shape} vs {b.data.shape}")
    data = a.data * b.data

    def backward(g):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    return _make(data, (a, b), "mul", backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """[n, k] @ [k, m] or [k] @ [k, m]."""
    if b.data.ndim != 2 or a.data.ndim not in (1, 2) or a.data.shape[-1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.data.ndim == 1:
            a._accumulate(b.data @ g)
            b._accumulate(np.outer(a.data, g))
        else:
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)

    return _make(data, (a, b), "matmul", backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def backward(g):
        a._accumulate(g * (a.data > 0))

    return _make(data, (a,), "relu", backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - data * data))

    return _make(data, (a,), "tanh", backward)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis`` (0 for vectors, 1 for per-row features)."""
    if not parts:
        raise ShapeMismatch("concat of zero tensors")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = (slice(None),) * axis + (slice(lo, hi),)
            p._accumulate(g[sl])

    return _make(data, tuple(parts), "concat", backward)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack [d] vectors into an [n, d] matrix."""
    if not rows:
        raise ShapeMismatch("stack_rows of zero tensors")
    data = np.stack([r.data for r in rows])

    def backward(g):
        for i, r in enumerate(rows):
            r._accumulate(g[i])

    return _make(data, tuple(rows), "stack_rows", backward)


def mean_rows(a: Tensor) -> Tensor:
    """[n, d] -> [d], average over axis 0."""
    if a.data.ndim != 2 or a.data.shape[0] == 0:
        raise ShapeMismatch(f"mean_rows: {a.data.shape}")
    n = a.data.shape[0]
    data = a.data.mean(axis=0)

    def backward(g):
        a._accumulate(np.broadcast_to(g / n, a.data.shape).copy())

    return _make(data, (a,), "mean_rows", backward)


def max_rows(a: Tensor) -> Tensor:
    """[n, d] -> [d], max over axis 0; ties resolve to the first row."""
    if a.data.ndim != 2 or a.data.shape[0] == 0:
        raise ShapeMismatch(f"max_rows: {a.data.shape}")
    idx = np.argmax(a.data, axis=0)
    data = a.data[idx, np.arange(a.data.shape[1])]

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[idx, np.arange(a.data.shape[1])] = g
        a._accumulate(ga)

    return _make(data, (a,), "max_rows", backward)


def mean_stack(scalars: Sequence[Tensor]) -> Tensor:
    """Mean of scalar tensors (the batch loss)."""
    if not scalars:
        raise ShapeMismatch("mean_stack of zero tensors")
    n = len(scalars)
    data = np.asarray(sum(s.data for s in scalars) / n, dtype=_DEFAULT_DTYPE)

    def backward(g):
        for s in scalars:
            s._accumulate(g / n)

    return _make(data, tuple(scalars), "mean_stack", backward)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def embed_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Row lookup into a [V, d] table; gradient scatters back by id."""
    if table.data.ndim != 2:
        raise ShapeMismatch(f"embed_lookup: table {table.data.shape}")
    vocab = table.data.shape[0]
    idx = np.asarray(list(ids), dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise IndexOutOfRange(f"embedding id outside [0, {vocab})")
    data = table.data[idx] if idx.size else np.zeros((0, table.data.shape[1]), dtype=_DEFAULT_DTYPE)

    def backward(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx, g)

    return _make(data, (table,), "embed_lookup", backward)


def _im2col(x: Tensor, kernel: int) -> Tensor:
    """[n, d] -> [n, kernel*d] sliding windows over a zero-padded sequence."""
    n, d = x.data.shape
    pad = (kernel - 1) // 2
    padded = np.zeros((n + 2 * pad, d), dtype=_DEFAULT_DTYPE)
    padded[pad:pad + n] = x.data
    windows = np.stack([padded[t:t + kernel].reshape(kernel * d) for t in range(n)])

    def backward(g):
        gw = g.reshape(n, kernel, d)
        gp = np.zeros_like(padded)
        for j in range(kernel):
            gp[j:j + n] += gw[:, j, :]
        x._accumulate(gp[pad:pad + n])

    return _make(windows, (x,), "im2col", backward)


def conv1d_maxpool(x: Tensor, filters: Tensor, bias: Tensor) -> Tensor:
    """Valid convolution over a symmetrically zero-padded [n, d_in] sequence,
    bias add, then max over time per filter.  ``filters`` is [k, d_in, F]."""
    if filters.data.ndim != 3:
        raise ShapeMismatch(f"conv1d_maxpool: filters {filters.data.shape}")
    kernel, d_in, n_filters = filters.data.shape
    if x.data.ndim != 2 or x.data.shape[0] < 1 or x.data.shape[1] != d_in:
        raise ShapeMismatch(f"conv1d_maxpool: input {x.data.shape} for filters {filters.data.shape}")
    if bias.data.shape != (n_filters,):
        raise ShapeMismatch(f"conv1d_maxpool: bias {bias.data.shape}")
    windows = _im2col(x, kernel)
    flat = reshape(filters, (kernel * d_in, n_filters))
    return max_rows(add(matmul(windows, flat), bias))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _make(data, (a,), "reshape", backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_encode(x: Tensor, wx: Tensor, wh: Tensor, b: Tensor, *, reverse: bool = False) -> Tensor:
    """Standard LSTM over [n, d] -> [n, h]; gates ordered (input, forget,
    cell candidate, output), zero initial state.  ``reverse`` processes the
    sequence back to front and re-reverses the output.

    Fused op: the whole recurrence is one graph node with a hand-written
    backward pass (BPTT), which keeps graphs small and training fast.
    """
    n, d = x.data.shape
    if n < 1:
        raise ShapeMismatch("lstm_encode: empty sequence")
    four_h = wx.data.shape[1]
    h_dim = four_h // 4
    if wx.data.shape != (d, four_h) or wh.data.shape != (h_dim, four_h) or b.data.shape != (four_h,):
        raise ShapeMismatch(
            f"lstm_encode: x {x.data.shape}, wx {wx.data.shape}, wh {wh.data.shape}, b {b.data.shape}")

    xs = x.data[::-1] if reverse else x.data
    pre = xs @ wx.data + b.data  # [n, 4h], recurrent term added per step

    i_s = np.empty((n, h_dim), dtype=_DEFAULT_DTYPE)
    f_s = np.empty_like(i_s)
    g_s = np.empty_like(i_s)
    o_s = np.empty_like(i_s)
    c_s = np.empty_like(i_s)
    tc_s = np.empty_like(i_s)
    h_s = np.empty_like(i_s)
    h_prev = np.zeros(h_dim, dtype=_DEFAULT_DTYPE)
    c_prev = np.zeros(h_dim, dtype=_DEFAULT_DTYPE)
    wh_data = wh.data
    for t in range(n):
        z = pre[t] + h_prev @ wh_data
        in_forget = _sigmoid(z[:2 * h_dim])
        i_t = in_forget[:h_dim]
        f_t = in_forget[h_dim:]
        g_t = np.tanh(z[2 * h_dim:3 * h_dim])
        o_t = _sigmoid(z[3 * h_dim:])
        c_t = f_t * c_prev + i_t * g_t
        tc_t = np.tanh(c_t)
        h_t = o_t * tc_t
        i_s[t], f_s[t], g_s[t], o_s[t] = i_t, f_t, g_t, o_t
        c_s[t], tc_s[t], h_s[t] = c_t, tc_t, h_t
        h_prev, c_prev = h_t, c_t

    out_data = h_s[::-1].copy() if reverse else h_s.copy()

    def backward(g):
        gh = g[::-1] if reverse else g
        zeros = np.zeros(h_dim, dtype=_DEFAULT_DTYPE)
        dz_all = np.empty((n, 4 * h_dim), dtype=_DEFAULT_DTYPE)
        dh_next = zeros
        dc_next = zeros
        for t in range(n - 1, -1, -1):
            c_before = c_s[t - 1] if t > 0 else zeros
            dh = gh[t] + dh_next
            do = dh * tc_s[t]
            dc = dc_next + dh * o_s[t] * (1.0 - tc_s[t] ** 2)
            dc_next = dc * f_s[t]
            dz = dz_all[t]
            dz[:h_dim] = dc * g_s[t] * i_s[t] * (1.0 - i_s[t])
            dz[h_dim:2 * h_dim] = dc * c_before * f_s[t] * (1.0 - f_s[t])
            dz[2 * h_dim:3 * h_dim] = dc * i_s[t] * (1.0 - g_s[t] ** 2)
            dz[3 * h_dim:] = do * o_s[t] * (1.0 - o_s[t])
            dh_next = wh.data @ dz
        # weight gradients batch into single matmuls over all timesteps
        h_before_all = np.vstack([np.zeros((1, h_dim)), h_s[:-1]])
        d_xs = dz_all @ wx.data.T
        x._accumulate(d_xs[::-1] if reverse else d_xs)
        wx._accumulate(xs.T @ dz_all)
        wh._accumulate(h_before_all.T @ dz_all)
        b._accumulate(dz_all.sum(axis=0))

    return _make(out_data, (x, wx, wh, b), "lstm_encode", backward)


LstmWeights = tuple[Tensor, Tensor, Tensor]


def bilstm_avg(x: Tensor, forward_weights: LstmWeights, backward_weights: LstmWeights) -> Tensor:
    """Concatenate per-step forward and backward LSTM outputs to [n, 2h],
    then average over time to a [2h] vector."""
    fwd = lstm_encode(x, *forward_weights, reverse=False)
    bwd = lstm_encode(x, *backward_weights, reverse=True)
    return mean_rows(concat([fwd, bwd], axis=1))


def dense(x: Tensor, weights: Tensor, bias: Tensor, activation: str = "none") -> Tensor:
    """Affine map then optional relu; [d_in] -> [d_out]."""
    out = add(matmul(x, weights), bias)
    if activation == "relu":
        return relu(out)
    if activation == "none":
        return out
    raise ValueError(f"unknown activation {activation!r}")


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def softmax_xent(logits: Tensor, target: int) -> tuple[Tensor, np.ndarray]:
    """Numerically stabilized softmax cross-entropy.

    Returns the scalar loss tensor and the probability vector (a plain
    array; gradients flow through the loss only).
    """
    c = logits.data.shape[0]
    if not 0 <= target < c:
        raise IndexOutOfRange(f"target {target} outside [0, {c})")
    probs = softmax_probs(logits.data)
    loss = np.asarray(-np.log(max(probs[target], 1e-300)), dtype=_DEFAULT_DTYPE)

    def backward(g):
        d = probs.copy()
        d[target] -= 1.0
        logits._accumulate(g * d)

    out = _make(loss, (logits,), "softmax_xent", backward)
    return out, probs.copy()


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: train mode zeroes each element with probability
    ``rate`` and scales survivors by 1/(1-rate); infer mode is the identity."""
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown dropout mode {mode!r}")
    if mode == "infer" or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    data = x.data * mask

    def backward(g):
        x._accumulate(g * mask)

    return _make(data, (x,), "dropout", backward)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Iterable[Parameter], state: AdamState) -> None:
    """Bias-corrected Adam update; zeroes gradients afterward."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        _check_finite(g, f"adam_step:{p.name}")
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        _check_finite(p.data, f"adam_step:{p.name}")
        p.zero_grad()


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

DENSE_INIT_SCALE = 0.08
EMBED_INIT_SCALE = 0.25


def uniform_param(name: str, shape: tuple[int, ...], rng: np.random.Generator,
                  scale: float = DENSE_INIT_SCALE) -> Parameter:
    return Parameter(name, rng.uniform(-scale, scale, size=shape))


def zeros_param(name: str, shape: tuple[int, ...]) -> Parameter:
    return Parameter(name, np.zeros(shape))


def embedding_param(name: str, shape: tuple[int, ...], rng: np.random.Generator) -> Parameter:
    return Parameter(name, rng.uniform(-EMBED_INIT_SCALE, EMBED_INIT_SCALE, size=shape))


def lstm_weight_params(prefix: str, d_in: int, hidden: int,
                       rng: np.random.Generator) -> tuple[Parameter, Parameter, Parameter]:
    """LSTM weights with the forget-gate bias slice initialized to 1.0."""
    wx = uniform_param(f"{prefix}_wx", (d_in, 4 * hidden), rng)
    wh = uniform_param(f"{prefix}_wh", (hidden, 4 * hidden), rng)
    bias = np.zeros(4 * hidden)
    bias[hidden:2 * hidden] = 1.0
    return wx, wh, Parameter(f"{prefix}_b", bias)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

def save_checkpoint(path, metadata: dict, params: dict[str, Parameter]) -> None:
    """Write the versioned checkpoint container: magic header, JSON metadata
    (with a parameter manifest), then the tensors as little-endian float32."""
    names = sorted(params)
    meta = dict(metadata)
    meta["params"] = [[n, list(params[n].data.shape)] for n in names]
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(params[n].data.astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint back; tensors are returned in the default dtype."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic)")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        tensors: dict[str, np.ndarray] = {}
        for name, shape in meta["params"]:
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 4)
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
            tensors[name] = arr.astype(_DEFAULT_DTYPE)
    return meta, tensors


def params_from_arrays(arrays: dict[str, np.ndarray]) -> dict[str, Parameter]:
    return {name: Parameter(name, arr) for name, arr in arrays.items()}
