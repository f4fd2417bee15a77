"""Dense float64 layers with hand-written backward passes.

Only the pieces the recurrent-convolutional model needs: a 1x3 valid
convolution, an LSTM cell, additive attention pooling, fully connected
layers, dropout, clamped cross-entropy, Adam, a finite-difference gradient
checker and a flat binary checkpoint format.

Layers keep their weights in ``params`` and accumulate gradients into
``grads`` (same keys). Forward passes return a cache that the matching
backward pass consumes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

CLAMP = 1e-12
_MAGIC = b"STDGNNCK"


class ShapeError(ValueError):
    pass


def glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=axis, keepdims=True)


def softmax_backward(y: np.ndarray, dy: np.ndarray, axis: int = -1) -> np.ndarray:
    return y * (dy - (y * dy).sum(axis=axis, keepdims=True))


class Layer:
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray]

    def zero_grad(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def _acc(self, name: str, g: np.ndarray) -> None:
        self.grads[name] += g


class Conv1x3(Layer):
    """Valid convolution with a 1x3 window along rows, then ReLU.

    Kernels are stored as ``(K, 1, 3, C_in)``. Input ``(..., rows, C_in)``,
    output ``(..., rows - 2, K)``.
    """

    def __init__(self, c_in: int, k: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.c_in, self.k = c_in, k
        self.params = {
            "W": glorot(rng, (k, 1, 3, c_in), 3 * c_in, k),
            "b": np.zeros(k),
        }
        self.zero_grad()

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.c_in:
            raise ShapeError(f"conv expects {self.c_in} channels, got {x.shape[-1]}")
        if x.shape[-2] < 3:
            raise ShapeError(f"conv needs >= 3 rows, got {x.shape[-2]}")
        cols = np.concatenate([x[..., :-2, :], x[..., 1:-1, :], x[..., 2:, :]], axis=-1)
        wmat = self.params["W"].reshape(self.k, 3 * self.c_in)
        pre = cols @ wmat.T + self.params["b"]
        out = np.maximum(pre, 0.0)
        return out, (cols, pre, x.shape)

    def backward(self, dout: np.ndarray, cache) -> np.ndarray:
        cols, pre, xshape = cache
        dpre = dout * (pre > 0)
        flat_d = dpre.reshape(-1, self.k)
        flat_c = cols.reshape(-1, 3 * self.c_in)
        self._acc("W", (flat_d.T @ flat_c).reshape(self.params["W"].shape))
        self._acc("b", flat_d.sum(axis=0))
        wmat = self.params["W"].reshape(self.k, 3 * self.c_in)
        dcols = dpre @ wmat
        c = self.c_in
        dx = np.zeros(xshape)
        dx[..., :-2, :] += dcols[..., :c]
        dx[..., 1:-1, :] += dcols[..., c : 2 * c]
        dx[..., 2:, :] += dcols[..., 2 * c :]
        return dx


def conv_forward(layer: Conv1x3, x: np.ndarray) -> np.ndarray:
    return layer.forward(x)[0]


_GATES = ("f", "i", "o", "c")


class LstmCell(Layer):
    """LSTM cell whose input and output gates read the previous cell state.

    Forget gate and candidate read ``h_{t-1}``; input and output gates read
    ``c_{t-1}``. ``standard=True`` swaps those two for ``h_{t-1}``.
    Inputs are row-batched: ``x (B, D)``, ``h, c (B, H)``.
    """

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator | None = None, standard: bool = False):
        rng = rng or np.random.default_rng(0)
        self.d_in, self.hidden, self.standard = d_in, hidden, standard
        self.params = {}
        for g in _GATES:
            self.params[f"W_{g}"] = glorot(rng, (hidden, d_in), d_in, hidden)
            self.params[f"U_{g}"] = glorot(rng, (hidden, hidden), hidden, hidden)
            self.params[f"b_{g}"] = np.zeros(hidden)
        self.params["b_f"] += 1.0
        self.zero_grad()

    def step(self, x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray):
        if x.shape[-1] != self.d_in or h_prev.shape[-1] != self.hidden or c_prev.shape[-1] != self.hidden:
            raise ShapeError("lstm input shapes do not match the cell")
        p = self.params
        gate_src = h_prev if self.standard else c_prev
        f = sigmoid(x @ p["W_f"].T + h_prev @ p["U_f"].T + p["b_f"])
        i = sigmoid(x @ p["W_i"].T + gate_src @ p["U_i"].T + p["b_i"])
        o = sigmoid(x @ p["W_o"].T + gate_src @ p["U_o"].T + p["b_o"])
        g = np.tanh(x @ p["W_c"].T + h_prev @ p["U_c"].T + p["b_c"])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        return h, c, (x, h_prev, c_prev, f, i, o, g, tc)

    def step_backward(self, dh: np.ndarray, dc: np.ndarray, cache):
        x, h_prev, c_prev, f, i, o, g, tc = cache
        p = self.params
        gate_src = h_prev if self.standard else c_prev
        da_o = dh * tc * o * (1.0 - o)
        dct = dc + dh * o * (1.0 - tc * tc)
        da_f = dct * c_prev * f * (1.0 - f)
        da_i = dct * g * i * (1.0 - i)
        da_c = dct * i * (1.0 - g * g)
        pre = {"f": da_f, "i": da_i, "o": da_o, "c": da_c}
        srcs = {"f": h_prev, "i": gate_src, "o": gate_src, "c": h_prev}
        dx = np.zeros_like(x)
        dh_prev = np.zeros_like(h_prev)
        dc_prev = dct * f
        for gname, da in pre.items():
            self._acc(f"W_{gname}", da.T @ x)
            self._acc(f"U_{gname}", da.T @ srcs[gname])
            self._acc(f"b_{gname}", da.sum(axis=0))
            dx += da @ p[f"W_{gname}"]
            dsrc = da @ p[f"U_{gname}"]
            if gname in ("f", "c") or self.standard:
                dh_prev += dsrc
            else:
                dc_prev += dsrc
        return dx, dh_prev, dc_prev

    def forward_seq(self, xs: np.ndarray):
        """Run over ``xs (B, T, D)`` from zero state; returns ``hs (B, T, H)``."""
        b, t_len, _ = xs.shape
        h = np.zeros((b, self.hidden))
        c = np.zeros((b, self.hidden))
        hs, caches = [], []
        for t in range(t_len):
            h, c, cache = self.step(xs[:, t], h, c)
            hs.append(h)
            caches.append(cache)
        return np.stack(hs, axis=1), caches

    def backward_seq(self, dhs: np.ndarray, caches) -> np.ndarray:
        b, t_len, _ = dhs.shape
        dxs = np.zeros((b, t_len, self.d_in))
        dh = np.zeros((b, self.hidden))
        dc = np.zeros((b, self.hidden))
        for t in reversed(range(t_len)):
            dx, dh, dc = self.step_backward(dhs[:, t] + dh, dc, caches[t])
            dxs[:, t] = dx
        return dxs


def lstm_step(cell: LstmCell, x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray):
    h, c, _ = cell.step(x_t, h_prev, c_prev)
    return h, c


class AttentionHead(Layer):
    """Additive attention pooling over a hidden-state sequence.

    score_t = v . tanh(W h_t + b); weights = softmax over t; output is the
    weighted sum of the h_t.
    """

    def __init__(self, hidden: int, width: int | None = None, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        width = hidden if width is None else width
        self.hidden, self.width = hidden, width
        self.params = {
            "W_e": glorot(rng, (width, hidden), hidden, width),
            "b_e": np.zeros(width),
            "v_e": glorot(rng, (width,), width, 1),
        }
        self.zero_grad()

    def forward(self, hs: np.ndarray):
        """``hs (B, T, H)`` -> ``g (B, H)``, ``betas (B, T)``."""
        if hs.ndim != 3 or hs.shape[1] == 0:
            raise ShapeError("attention needs a nonempty (B, T, H) sequence")
        u = np.tanh(hs @ self.params["W_e"].T + self.params["b_e"])
        e = u @ self.params["v_e"]
        betas = softmax(e, axis=1)
        g = np.einsum("bt,bth->bh", betas, hs)
        return g, betas, (hs, u, betas)

    def backward(self, dg: np.ndarray, cache) -> np.ndarray:
        hs, u, betas = cache
        dhs = betas[:, :, None] * dg[:, None, :]
        dbeta = np.einsum("bh,bth->bt", dg, hs)
        de = softmax_backward(betas, dbeta, axis=1)
        self._acc("v_e", np.einsum("bt,btw->w", de, u))
        da = de[:, :, None] * self.params["v_e"] * (1.0 - u * u)
        self._acc("W_e", np.einsum("btw,bth->wh", da, hs))
        self._acc("b_e", da.sum(axis=(0, 1)))
        dhs += da @ self.params["W_e"]
        return dhs


def attention(head: AttentionHead, h_seq) -> tuple[np.ndarray, np.ndarray]:
    """Pool a single sequence ``(T, H)``; returns ``(g, betas)``."""
    hs = np.asarray(h_seq, dtype=np.float64)
    if hs.ndim != 2 or hs.shape[0] == 0:
        raise ShapeError("attention needs a nonempty (T, H) sequence")
    g, betas, _ = head.forward(hs[None])
    return g[0], betas[0]


ACTIVATIONS = ("none", "softmax", "sigmoid", "relu")


class DenseLayer(Layer):
    """``y = act(x W^T + b)`` with ``W (out, in)``."""

    def __init__(self, n_in: int, n_out: int, activation: str = "none", rng: np.random.Generator | None = None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng or np.random.default_rng(0)
        self.n_in, self.n_out, self.activation = n_in, n_out, activation
        self.params = {"W": glorot(rng, (n_out, n_in), n_in, n_out), "b": np.zeros(n_out)}
        self.zero_grad()

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"dense expects {self.n_in} inputs, got {x.shape[-1]}")
        z = x @ self.params["W"].T + self.params["b"]
        if self.activation == "softmax":
            y = softmax(z)
        elif self.activation == "sigmoid":
            y = sigmoid(z)
        elif self.activation == "relu":
            y = np.maximum(z, 0.0)
        else:
            y = z
        return y, (x, z, y)

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        x, z, y = cache
        if self.activation == "softmax":
            dz = softmax_backward(y, dy)
        elif self.activation == "sigmoid":
            dz = dy * y * (1.0 - y)
        elif self.activation == "relu":
            dz = dy * (z > 0)
        else:
            dz = dy
        x2 = x.reshape(-1, self.n_in)
        dz2 = dz.reshape(-1, self.n_out)
        self._acc("W", dz2.T @ x2)
        self._acc("b", dz2.sum(axis=0))
        return dz @ self.params["W"]


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    return layer.forward(np.asarray(x, dtype=np.float64))[0]


def dropout_mask(rng: np.random.Generator, shape: tuple[int, ...], rate: float) -> np.ndarray:
    """Inverted-dropout mask; multiply activations by it in train mode."""
    if rate <= 0.0:
        return np.ones(shape)
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def cross_entropy(y_pred: np.ndarray, y_true: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed ``-y log(clamp(y_pred))`` and its gradient w.r.t. ``y_pred``.

    Accepts a single vector or a ``(B, C)`` batch (losses are summed).
    """
    y_true = np.asarray(y_true, dtype=np.float64)
    rows = y_true.reshape(-1, y_true.shape[-1])
    if not (np.isin(rows, (0.0, 1.0)).all() and np.all(rows.sum(axis=1) == 1.0)):
        raise ValueError("y_true must be one-hot")
    clipped = np.clip(y_pred, CLAMP, 1.0)
    loss = float(-(y_true * np.log(clipped)).sum())
    active = (y_pred >= CLAMP) & (y_pred <= 1.0)
    grad = np.where(active, -y_true / clipped, 0.0)
    return loss, grad


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    """In-place Adam step with bias correction."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def grad_check(
    loss_and_grads: Callable[[], tuple[float, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    n_coords: int = 200,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grads`` must read ``params`` by reference and be deterministic.
    Up to ``n_coords`` coordinates are sampled across all parameters.
    """
    _, analytic = loss_and_grads()
    analytic = {k: v.copy() for k, v in analytic.items()}
    coords = [(name, k) for name, p in params.items() for k in range(p.size)]
    rng = np.random.default_rng(seed)
    if len(coords) > n_coords:
        pick = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]
    worst = 0.0
    for name, k in coords:
        flat = params[name].reshape(-1)
        orig = flat[k]
        flat[k] = orig + step
        up = loss_and_grads()[0]
        flat[k] = orig - step
        down = loss_and_grads()[0]
        flat[k] = orig
        num = (up - down) / (2.0 * step)
        a = analytic[name].reshape(-1)[k]
        worst = max(worst, abs(a - num) / max(1e-8, abs(a) + abs(num)))
    return worst


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Magic, u64 header length, JSON header, then little-endian float64 data."""
    names = list(params)
    header = {
        "names": names,
        "shapes": [list(params[n].shape) for n in names],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen])
    offset = 16 + hlen
    params = {}
    for name, shape in zip(header["names"], header["shapes"]):
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        params[name] = arr.reshape(shape).astype(np.float64)
        offset += 8 * count
    return params, header["meta"]
