"""Minimal differentiable kernel: dense layers, LSTM cells, BPTT, Adam.

Everything is double precision and CPU-only. Layers expose explicit forward
caches and backward functions so the caller chains backpropagation; there is
no autodiff graph. Weight init is uniform in [-k, k] with k = 1/sqrt(fan_in),
drawn from a caller-supplied seeded generator, so training is bit-reproducible.
"""

from __future__ import annotations

import io
from typing import Iterable, Sequence

import numpy as np

Array = np.ndarray

#: Floor applied to log arguments; prevents -inf loss on confident misses.
PROB_FLOOR = 1e-12

#: Library-wide counters, e.g. how often the cross-entropy floor engaged.
diagnostics: dict[str, int] = {"ce_floor_clamps": 0}


class ShapeError(ValueError):
    """Operand dimensions do not match the layer contract."""


def _check_vector(x: Array, dim: int, what: str) -> Array:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dim,):
        raise ShapeError(f"{what}: expected shape ({dim},), got {x.shape}")
    return x


def sigmoid(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: Array) -> Array:
    shifted = x - np.max(x)
    ex = np.exp(shifted)
    return ex / ex.sum()


class Parameter:
    """A named weight array paired with its gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: Array):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.value.shape})"


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Array:
    k = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-k, k, size=shape)


ACTIVATIONS = ("identity", "sigmoid", "tanh", "softmax")


class Dense:
    """y = activation(W x + b) with W of shape (out_dim, in_dim)."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "identity",
                 *, rng: np.random.Generator, name: str = "dense"):
        if in_dim <= 0 or out_dim <= 0:
            raise ShapeError(f"{name}: dimensions must be positive")
        if activation not in ACTIVATIONS:
            raise ValueError(f"{name}: unknown activation {activation!r}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.W = Parameter(f"{name}.W", init_uniform(rng, (out_dim, in_dim), in_dim))
        self.b = Parameter(f"{name}.b", np.zeros(out_dim))

    def parameters(self) -> list[Parameter]:
        return [self.W, self.b]

    def forward(self, x: Array) -> tuple[Array, tuple]:
        x = _check_vector(x, self.in_dim, "Dense input")
        z = self.W.value @ x + self.b.value
        if self.activation == "identity":
            y = z
        elif self.activation == "sigmoid":
            y = sigmoid(z)
        elif self.activation == "tanh":
            y = np.tanh(z)
        else:  # softmax
            y = softmax(z)
        return y, (x, y)

    def __call__(self, x: Array) -> Array:
        return self.forward(x)[0]

    def backward(self, cache: tuple, dy: Array) -> Array:
        """Accumulate parameter gradients; return gradient w.r.t. the input."""
        x, y = cache
        dy = _check_vector(dy, self.out_dim, "Dense output grad")
        if self.activation == "identity":
            dz = dy
        elif self.activation == "sigmoid":
            dz = dy * y * (1.0 - y)
        elif self.activation == "tanh":
            dz = dy * (1.0 - y * y)
        else:  # softmax Jacobian: diag(y) - y y^T
            dz = y * (dy - float(dy @ y))
        self.W.grad += np.outer(dz, x)
        self.b.grad += dz
        return self.W.value.T @ dz


class LstmCell:
    """Standard gated LSTM cell over [input (+) hidden].

    The four gates are stacked row-wise in a single weight matrix, in the
    order input, forget, cell candidate, output; all share input and hidden
    dimensions. Forget-gate bias starts at 1.
    """

    def __init__(self, input_dim: int, hidden_dim: int,
                 *, rng: np.random.Generator, name: str = "lstm"):
        if input_dim <= 0 or hidden_dim <= 0:
            raise ShapeError(f"{name}: dimensions must be positive")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        fan_in = input_dim + hidden_dim
        self.W = Parameter(f"{name}.W", init_uniform(rng, (4 * hidden_dim, fan_in), fan_in))
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim:2 * hidden_dim] = 1.0
        self.b = Parameter(f"{name}.b", b)

    def parameters(self) -> list[Parameter]:
        return [self.W, self.b]

    def zero_state(self) -> tuple[Array, Array]:
        return np.zeros(self.hidden_dim), np.zeros(self.hidden_dim)

    def step(self, x: Array, h_prev: Array, c_prev: Array) -> tuple[Array, Array, tuple]:
        H = self.hidden_dim
        x = _check_vector(x, self.input_dim, "LstmCell input")
        h_prev = _check_vector(h_prev, H, "LstmCell h_prev")
        c_prev = _check_vector(c_prev, H, "LstmCell c_prev")
        z = np.concatenate([x, h_prev])
        a = self.W.value @ z + self.b.value
        i = sigmoid(a[:H])
        f = sigmoid(a[H:2 * H])
        g = np.tanh(a[2 * H:3 * H])
        o = sigmoid(a[3 * H:])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        return h, c, (z, i, f, g, o, c_prev, tc)

    def backward_step(self, cache: tuple, dh: Array, dc: Array) -> tuple[Array, Array, Array]:
        """Backprop one step; returns (dx, dh_prev, dc_prev)."""
        z, i, f, g, o, c_prev, tc = cache
        H = self.hidden_dim
        do = dh * tc
        dc_total = dc + dh * o * (1.0 - tc * tc)
        di = dc_total * g
        df = dc_total * c_prev
        dg = dc_total * i
        da = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ])
        self.W.grad += np.outer(da, z)
        self.b.grad += da
        dz = self.W.value.T @ da
        return dz[:self.input_dim], dz[self.input_dim:], dc_total * f


def lstm_cell_step(cell: LstmCell, x: Array, h_prev: Array, c_prev: Array) -> tuple[Array, Array]:
    """One cache-free LSTM step (inference convenience)."""
    h, c, _ = cell.step(x, h_prev, c_prev)
    return h, c


def bilstm_forward(
    fwd: LstmCell,
    bwd: LstmCell,
    seq: Sequence[Array],
    h0: Array | None = None,
) -> tuple[list[Array], tuple]:
    """Bidirectional pass; output[t] = [h_fwd_t ; h_bwd_t], dim 2*hidden.

    `h0`, when given, initializes the hidden state of both directions. Cell
    states start at zero. Raises on an empty sequence.
    """
    if len(seq) == 0:
        raise ShapeError("bilstm_forward: empty sequence")
    if fwd.hidden_dim != bwd.hidden_dim:
        raise ShapeError("bilstm_forward: directions must share hidden_dim")
    H = fwd.hidden_dim
    h_init = np.zeros(H) if h0 is None else _check_vector(h0, H, "bilstm h0")

    h, c = h_init, np.zeros(H)
    f_states, f_caches = [], []
    for x in seq:
        h, c, cache = fwd.step(x, h, c)
        f_states.append(h)
        f_caches.append(cache)

    h, c = h_init, np.zeros(H)
    b_states_rev, b_caches_rev = [], []
    for x in reversed(seq):
        h, c, cache = bwd.step(x, h, c)
        b_states_rev.append(h)
        b_caches_rev.append(cache)
    b_states = list(reversed(b_states_rev))

    outputs = [np.concatenate([hf, hb]) for hf, hb in zip(f_states, b_states)]
    cache = (f_caches, b_caches_rev, len(seq))
    return outputs, cache


def bilstm_backward(
    fwd: LstmCell,
    bwd: LstmCell,
    cache: tuple,
    d_outputs: Sequence[Array | None],
    d_final_fwd: Array | None = None,
    d_final_bwd: Array | None = None,
) -> tuple[list[Array], Array]:
    """Backprop through a bidirectional pass.

    `d_outputs[t]` is the gradient on the concatenated per-step output (may be
    None for steps that received no gradient); `d_final_fwd`/`d_final_bwd` are
    extra gradients on each direction's final hidden state. Returns gradients
    w.r.t. the input sequence and the shared initial hidden state.
    """
    f_caches, b_caches_rev, T = cache
    H = fwd.hidden_dim
    d_fwd_h = [np.zeros(H) for _ in range(T)]
    d_bwd_h = [np.zeros(H) for _ in range(T)]  # indexed by original position
    for t, d in enumerate(d_outputs):
        if d is None:
            continue
        d_fwd_h[t] += d[:H]
        d_bwd_h[t] += d[H:]
    if d_final_fwd is not None:
        d_fwd_h[T - 1] += d_final_fwd
    if d_final_bwd is not None:
        d_bwd_h[0] += d_final_bwd

    dx = [np.zeros(fwd.input_dim) for _ in range(T)]

    dh, dc = np.zeros(H), np.zeros(H)
    for t in range(T - 1, -1, -1):
        dh = dh + d_fwd_h[t]
        dxt, dh, dc = fwd.backward_step(f_caches[t], dh, dc)
        dx[t] += dxt
    dh0 = dh.copy()

    dh, dc = np.zeros(H), np.zeros(H)
    # backward direction processed positions T-1..0; unwind in reverse.
    for k in range(T - 1, -1, -1):
        pos = T - 1 - k
        dh = dh + d_bwd_h[pos]
        dxt, dh, dc = bwd.backward_step(b_caches_rev[k], dh, dc)
        dx[pos] += dxt
    dh0 += dh
    return dx, dh0


def cross_entropy(pred_dist: Array, target_index: int) -> float:
    """-log(pred_dist[target_index]) for a distribution summing to 1.

    Probabilities below PROB_FLOOR are clamped (counted in `diagnostics`).
    """
    pred_dist = np.asarray(pred_dist, dtype=np.float64)
    if pred_dist.ndim != 1:
        raise ShapeError("cross_entropy: pred_dist must be a vector")
    if not 0 <= target_index < pred_dist.shape[0]:
        raise IndexError(f"target index {target_index} out of range")
    total = float(pred_dist.sum())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"cross_entropy: pred_dist sums to {total}, not 1")
    p = float(pred_dist[target_index])
    if p < PROB_FLOOR:
        diagnostics["ce_floor_clamps"] += 1
        p = PROB_FLOOR
    return -float(np.log(p))


def softmax_cross_entropy(logits: Array, target_index: int) -> tuple[float, Array, Array]:
    """Fused softmax + cross-entropy; returns (loss, dlogits, probs)."""
    probs = softmax(np.asarray(logits, dtype=np.float64))
    loss = cross_entropy(probs, target_index)
    dlogits = probs.copy()
    dlogits[target_index] -= 1.0
    return loss, dlogits, probs


class Adam:
    """Adam with bias correction; moments keyed by parameter order."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad[...] = 0.0

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad.shape != p.value.shape:
                raise ShapeError(f"{p.name}: grad shape {p.grad.shape} != {p.value.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.value -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def assert_finite(params: Iterable[Parameter]) -> None:
    for p in params:
        if not np.isfinite(p.value).all():
            raise FloatingPointError(f"non-finite values in parameter {p.name}")


# ---------------------------------------------------------------------------
# Checkpoint format: text header (format version, meta lines, parameter
# manifest with names and dimensions), then raw little-endian float64 data in
# manifest order. Round-trips are bit-exact.
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = "NNCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, params: Sequence[Parameter],
                    meta: dict[str, str] | None = None) -> None:
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise ValueError("duplicate parameter names in checkpoint manifest")
    header = io.StringIO()
    header.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n")
    for key, value in (meta or {}).items():
        if "\n" in key or "\n" in str(value) or " " in key:
            raise ValueError(f"bad meta entry: {key!r}")
        header.write(f"meta {key} {value}\n")
    for p in params:
        dims = " ".join(str(d) for d in p.value.shape) or "0"
        header.write(f"param {p.name} {dims}\n")
    header.write("data\n")
    with open(path, "wb") as fh:
        fh.write(header.getvalue().encode("ascii"))
        for p in params:
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> tuple[dict[str, str], dict[str, Array]]:
    """Returns (meta, ordered name -> array mapping)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.index(b"\n")
    magic = blob[:nl].decode("ascii").split()
    if len(magic) != 2 or magic[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    if int(magic[1]) != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {magic[1]}")
    meta: dict[str, str] = {}
    manifest: list[tuple[str, tuple[int, ...]]] = []
    pos = nl + 1
    while True:
        nl = blob.index(b"\n", pos)
        line = blob[pos:nl].decode("ascii")
        pos = nl + 1
        if line == "data":
            break
        kind, rest = line.split(" ", 1)
        if kind == "meta":
            key, value = rest.split(" ", 1)
            meta[key] = value
        elif kind == "param":
            fields = rest.split(" ")
            name = fields[0]
            dims = tuple(int(d) for d in fields[1:] if d != "0") or ()
            manifest.append((name, dims))
        else:
            raise ValueError(f"bad checkpoint header line: {line!r}")
    arrays: dict[str, Array] = {}
    for name, dims in manifest:
        count = int(np.prod(dims)) if dims else 1
        raw = np.frombuffer(blob, dtype="<f8", count=count, offset=pos)
        pos += count * 8
        arrays[name] = raw.reshape(dims).astype(np.float64).copy()
    if pos != len(blob):
        raise ValueError("trailing bytes in checkpoint data")
    return meta, arrays


def load_into(params: Sequence[Parameter], path: str) -> dict[str, str]:
    """Load a checkpoint into existing parameters, matching by name."""
    meta, arrays = load_checkpoint(path)
    by_name = {p.name: p for p in params}
    if set(by_name) != set(arrays):
        missing = set(by_name) ^ set(arrays)
        raise ValueError(f"checkpoint manifest mismatch: {sorted(missing)}")
    for name, arr in arrays.items():
        p = by_name[name]
        if p.value.shape != arr.shape:
            raise ShapeError(f"{name}: checkpoint shape {arr.shape} != {p.value.shape}")
        p.value[...] = arr
    return meta
