"""Graph recurrent convolutional network over walk tensors.

One replica ("component") per time scale. Per slice, a node's walk block
``(l*r, a_v)`` goes through two 1x3 convolutions and average pooling; the
pooled slice features feed an LSTM across slices, attention pools the hidden
states into ``g``, and a fully connected head produces class probabilities.
Component outputs are fused elementwise through a sigmoid.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .nncore import (
    AdamState,
    AttentionHead,
    Conv1x3,
    DenseLayer,
    LstmCell,
    ShapeError,
    adam_update,
    cross_entropy,
    dropout_mask,
    glorot,
    sigmoid,
)

log = logging.getLogger(__name__)

COMPONENTS = ("hour", "day", "week")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class GrcnnConfig:
    k1: int = 64
    k2: int = 64
    hidden: int = 256
    fc_sizes: tuple[int, ...] = (2048, 2048)
    dropout: float = 0.5
    lr: float = 0.01
    max_epoch: int = 100
    t_hour: int = 24
    t_day: int = 7
    t_week: int = 4
    encoding: str = "onehot"
    embed_dim: int = 64
    attention: bool = True
    components: tuple[str, ...] = COMPONENTS
    batch_size: int = 32
    patience: int = 10
    standard_lstm: bool = False
    renormalize_loss: bool = False

    def __post_init__(self):
        counts = (self.k1, self.k2, self.hidden, self.max_epoch, self.t_hour, self.t_day,
                  self.t_week, self.embed_dim, self.batch_size, self.patience, *self.fc_sizes)
        if any(c < 1 for c in counts):
            raise ValueError("all GRCNN counts must be >= 1")
        if not self.components or any(c not in COMPONENTS for c in self.components):
            raise ValueError(f"components must be a nonempty subset of {COMPONENTS}")
        if self.encoding not in ("onehot", "index"):
            raise ValueError("encoding must be 'onehot' or 'index'")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def slices(self, component: str) -> int:
        return {"hour": self.t_hour, "day": self.t_day, "week": self.t_week}[component]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fc_sizes"] = list(self.fc_sizes)
        d["components"] = list(self.components)
        return d


def resolve_encoding(n_nodes: int, requested: str | None = None) -> str:
    """One-hot inputs for small vocabularies, learned lookups above 2048 nodes."""
    if requested:
        return requested
    return "onehot" if n_nodes <= 2048 else "index"


def fuse(
    outputs: Mapping[str, np.ndarray], weights: Mapping[str, np.ndarray]
) -> np.ndarray:
    """``sigmoid(sum_c w_c * y_c)`` over the components present in ``outputs``."""
    if not outputs:
        raise ShapeError("nothing to fuse")
    shapes = {np.shape(y)[-1] for y in outputs.values()} | {np.shape(weights[c])[-1] for c in outputs}
    if len(shapes) != 1:
        raise ShapeError(f"fusion inputs disagree on class count: {sorted(shapes)}")
    total = sum(np.asarray(weights[c]) * np.asarray(y) for c, y in outputs.items())
    return sigmoid(np.asarray(total, dtype=np.float64))


class Component:
    """Parameters and passes of one time-scale replica."""

    def __init__(self, name: str, cfg: GrcnnConfig, n_nodes: int, n_extra: int,
                 n_classes: int, rng: np.random.Generator):
        self.name = name
        self.cfg = cfg
        self.n_nodes = n_nodes
        if cfg.encoding == "onehot":
            self.a_v = n_nodes
            self.table = np.vstack([np.eye(n_nodes), np.zeros((1, n_nodes))])
            self.embedding = None
        else:
            self.a_v = cfg.embed_dim
            self.embedding = glorot(rng, (n_nodes + 1, cfg.embed_dim), n_nodes + 1, cfg.embed_dim)
        self.conv1 = Conv1x3(self.a_v, cfg.k1, rng)
        self.conv2 = Conv1x3(cfg.k1, cfg.k2, rng)
        self.lstm = LstmCell(cfg.k2, cfg.hidden, rng, standard=cfg.standard_lstm)
        self.att = AttentionHead(cfg.hidden, rng=rng)
        sizes = [cfg.hidden + n_extra, *cfg.fc_sizes]
        self.head = [DenseLayer(a, b, "relu", rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.head.append(DenseLayer(sizes[-1], n_classes, "softmax", rng))
        self.fusion = np.ones(n_classes)
        self.fusion_grad = np.zeros(n_classes)
        self.embedding_grad = None if self.embedding is None else np.zeros_like(self.embedding)

    def layers(self):
        yield "conv1", self.conv1
        yield "conv2", self.conv2
        yield "lstm", self.lstm
        yield "att", self.att
        for k, layer in enumerate(self.head):
            yield f"fc{k}", layer

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for lname, layer in self.layers():
            for pname, arr in layer.params.items():
                out[f"{self.name}.{lname}.{pname}"] = arr
        out[f"{self.name}.fusion"] = self.fusion
        if self.embedding is not None:
            out[f"{self.name}.embedding"] = self.embedding
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for lname, layer in self.layers():
            for pname, arr in layer.grads.items():
                out[f"{self.name}.{lname}.{pname}"] = arr
        out[f"{self.name}.fusion"] = self.fusion_grad
        if self.embedding is not None:
            out[f"{self.name}.embedding"] = self.embedding_grad
        return out

    def zero_grad(self) -> None:
        for _, layer in self.layers():
            layer.zero_grad()
        self.fusion_grad = np.zeros_like(self.fusion)
        if self.embedding is not None:
            self.embedding_grad = np.zeros_like(self.embedding)

    def encode(self, walks: np.ndarray, holders: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gather walk blocks ``(B, T, L)`` for the holders and embed them."""
        t_len = walks.shape[0]
        if holders.shape[1] != t_len:
            raise ShapeError(f"{self.name}: {holders.shape[1]} holder slices for {t_len} walk slices")
        idx = walks[np.arange(t_len)[None, :], holders]
        lookup = self.table if self.embedding is None else self.embedding
        return idx, lookup[idx]

    def embed(self, walks: np.ndarray, holders: np.ndarray):
        """Walk blocks -> ``g (B, H)``, plus hidden states, betas and a cache."""
        idx, x = self.encode(walks, holders)
        c1, k1 = self.conv1.forward(x)
        c2, k2 = self.conv2.forward(c1)
        pooled = c2.mean(axis=2)
        hs, lk = self.lstm.forward_seq(pooled)
        if self.cfg.attention:
            g, betas, ak = self.att.forward(hs)
        else:
            betas = np.full(hs.shape[:2], 1.0 / hs.shape[1])
            g, ak = hs.mean(axis=1), None
        return g, hs, betas, (idx, k1, k2, c2.shape, lk, ak, hs.shape)

    def embed_backward(self, dg: np.ndarray, cache) -> None:
        idx, k1, k2, c2_shape, lk, ak, hs_shape = cache
        if self.cfg.attention:
            dhs = self.att.backward(dg, ak)
        else:
            dhs = np.repeat(dg[:, None, :], hs_shape[1], axis=1) / hs_shape[1]
        dpooled = self.lstm.backward_seq(dhs, lk)
        dc2 = np.broadcast_to(dpooled[:, :, None, :] / c2_shape[2], c2_shape)
        dc1 = self.conv2.backward(dc2, k2)
        dx = self.conv1.backward(dc1, k1)
        if self.embedding is not None:
            np.add.at(self.embedding_grad, idx.reshape(-1), dx.reshape(-1, self.a_v))

    def head_forward(self, mu: np.ndarray, train: bool, rng: np.random.Generator | None):
        caches = []
        a = mu
        for layer in self.head[:-1]:
            a, c = layer.forward(a)
            mask = dropout_mask(rng, a.shape, self.cfg.dropout) if train else None
            if mask is not None:
                a = a * mask
            caches.append((c, mask))
        y, c = self.head[-1].forward(a)
        caches.append((c, None))
        return y, caches

    def head_backward(self, dy: np.ndarray, caches) -> np.ndarray:
        d = self.head[-1].backward(dy, caches[-1][0])
        for layer, (c, mask) in zip(reversed(self.head[:-1]), reversed(caches[:-1])):
            if mask is not None:
                d = d * mask
            d = layer.backward(d, c)
        return d


@dataclass
class History:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    best_epoch: int = 0

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
            for row in zip(self.epoch, self.train_loss, self.val_loss, self.val_acc):
                w.writerow([row[0], *(repr(float(v)) for v in row[1:])])


class Grcnn:
    """The fused multi-component model.

    ``walks`` maps component name to an index walk tensor ``(T_c, N, l*r)``;
    ``holders`` maps component name to ``(B, T_c)`` node indices;
    ``extra`` is an optional ``(B, E)`` block appended to ``g`` (topic vectors).
    """

    def __init__(self, cfg: GrcnnConfig, n_nodes: int, n_classes: int, n_extra: int = 0, seed: int = 0):
        self.cfg = cfg
        self.n_nodes, self.n_classes, self.n_extra = n_nodes, n_classes, n_extra
        self.seed = seed
        self.components = {
            name: Component(name, cfg, n_nodes, n_extra, n_classes,
                            np.random.default_rng([seed, COMPONENTS.index(name)]))
            for name in cfg.components
        }
        self.dropout_rng = np.random.default_rng([seed, 99])

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for comp in self.components.values():
            out.update(comp.parameters())
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for comp in self.components.values():
            out.update(comp.gradients())
        return out

    def load_parameters(self, params: Mapping[str, np.ndarray]) -> None:
        own = self.parameters()
        missing = set(own) - set(params)
        if missing:
            raise KeyError(f"checkpoint lacks {sorted(missing)[:3]}")
        for name, arr in own.items():
            if arr.shape != params[name].shape:
                raise ShapeError(f"{name}: checkpoint shape {params[name].shape} != {arr.shape}")
            arr[...] = params[name]

    def zero_grad(self) -> None:
        for comp in self.components.values():
            comp.zero_grad()

    def _check_extra(self, extra, batch: int):
        if self.n_extra == 0:
            return None
        if extra is None or extra.shape != (batch, self.n_extra):
            raise ShapeError(f"expected extra features of shape ({batch}, {self.n_extra})")
        return np.asarray(extra, dtype=np.float64)

    def forward(self, walks, holders, extra=None, train: bool = False):
        batch = next(iter(holders.values())).shape[0]
        extra = self._check_extra(extra, batch)
        outs, caches = {}, {}
        for name, comp in self.components.items():
            g, hs, betas, ecache = comp.embed(walks[name], holders[name])
            mu = g if extra is None else np.concatenate([g, extra], axis=1)
            y, hcache = comp.head_forward(mu, train, self.dropout_rng)
            outs[name] = y
            caches[name] = (ecache, hcache)
        weights = {n: c.fusion for n, c in self.components.items()}
        return fuse(outs, weights), (outs, caches)

    def predict(self, walks, holders, extra=None, batch_size: int = 256) -> np.ndarray:
        n = next(iter(holders.values())).shape[0]
        out = []
        for lo in range(0, n, batch_size):
            sl = slice(lo, lo + batch_size)
            y, _ = self.forward(walks, {k: v[sl] for k, v in holders.items()},
                                None if extra is None else extra[sl], train=False)
            out.append(y)
        return np.concatenate(out) if out else np.zeros((0, self.n_classes))

    def loss_and_backward(self, walks, holders, labels: np.ndarray, extra=None, train: bool = True) -> float:
        """Mean clamped cross-entropy on the fused output; fills gradients."""
        self.zero_grad()
        y_tilde, (outs, caches) = self.forward(walks, holders, extra, train=train)
        batch = len(labels)
        onehot = np.eye(self.n_classes)[labels]
        if self.cfg.renormalize_loss:
            total = y_tilde.sum(axis=1, keepdims=True)
            q = y_tilde / total
            loss, dq = cross_entropy(q, onehot)
            d_tilde = (dq - (dq * q).sum(axis=1, keepdims=True)) / total
        else:
            loss, d_tilde = cross_entropy(y_tilde, onehot)
        loss /= batch
        ds = d_tilde * y_tilde * (1.0 - y_tilde) / batch
        for name, comp in self.components.items():
            comp.fusion_grad += (ds * outs[name]).sum(axis=0)
            dmu = comp.head_backward(ds * comp.fusion, caches[name][1])
            comp.embed_backward(dmu[:, : self.cfg.hidden], caches[name][0])
        return loss

    def component_forward(self, name: str, walks: np.ndarray, node: int):
        """``(g_i, h_seq, betas)`` for one node on one component."""
        comp = self.components[name]
        holders = np.full((1, walks.shape[0]), node, dtype=np.int64)
        g, hs, betas, _ = comp.embed(walks, holders)
        return g[0], hs[0], betas[0]


def accuracy_top1(scores: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.argmax(scores, axis=1) == labels))


def _subset(holders, extra, idx):
    return {k: v[idx] for k, v in holders.items()}, None if extra is None else extra[idx]


def mean_loss(model: Grcnn, walks, holders, labels, extra=None) -> float:
    y = model.predict(walks, holders, extra)
    onehot = np.eye(model.n_classes)[labels]
    if model.cfg.renormalize_loss:
        y = y / y.sum(axis=1, keepdims=True)
    return cross_entropy(y, onehot)[0] / max(1, len(labels))


def train(
    cfg: GrcnnConfig,
    walks: Mapping[str, np.ndarray],
    holders: Mapping[str, np.ndarray],
    labels: np.ndarray,
    n_classes: int,
    extra: np.ndarray | None = None,
    val: tuple[Mapping[str, np.ndarray], np.ndarray, np.ndarray | None] | None = None,
    seed: int = 0,
    track_train_acc: bool = False,
    stop_at_train_acc: float | None = None,
) -> tuple[Grcnn, History]:
    """Mini-batch Adam on the fused cross-entropy.

    With ``val = (holders, labels, extra)`` training stops once validation
    accuracy has not improved for ``cfg.patience`` epochs and the best
    parameters are restored.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise TrainingError("empty training set")
    n_nodes = next(iter(walks.values())).shape[1]
    n_extra = 0 if extra is None else extra.shape[1]
    model = Grcnn(cfg, n_nodes, n_classes, n_extra, seed)
    state = AdamState(lr=cfg.lr)
    params = model.parameters()
    order_rng = np.random.default_rng([seed, 7])
    hist = History()
    best_acc, best_params, stale = -math.inf, None, 0

    for epoch in range(1, cfg.max_epoch + 1):
        order = order_rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            h_b, e_b = _subset(holders, extra, idx)
            loss = model.loss_and_backward(walks, h_b, labels[idx], e_b, train=True)
            if not math.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            adam_update(state, params, model.gradients())
            total += loss * len(idx)
        hist.epoch.append(epoch)
        hist.train_loss.append(total / n)
        if track_train_acc or stop_at_train_acc is not None:
            hist.train_acc.append(accuracy_top1(model.predict(walks, holders, extra), labels))
        if val is not None and len(val[1]):
            v_h, v_y, v_e = val
            scores = model.predict(walks, v_h, v_e)
            acc = accuracy_top1(scores, v_y)
            hist.val_acc.append(acc)
            hist.val_loss.append(mean_loss(model, walks, v_h, v_y, v_e))
            if acc > best_acc:
                best_acc, stale, hist.best_epoch = acc, 0, epoch
                best_params = {k: v.copy() for k, v in params.items()}
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        else:
            hist.val_acc.append(float("nan"))
            hist.val_loss.append(float("nan"))
            hist.best_epoch = epoch
        if stop_at_train_acc is not None and hist.train_acc[-1] >= stop_at_train_acc:
            break
    if best_params is not None:
        model.load_parameters(best_params)
    return model, hist


@dataclass
class NodeEmbedding:
    g: dict[str, np.ndarray]  # component -> (N, H)
    betas: dict[str, np.ndarray]  # component -> (N, T_c)
    hidden: dict[str, np.ndarray]  # component -> (N, T_c, H)


def embed_nodes(model: Grcnn, walks: Mapping[str, np.ndarray], batch_size: int = 256) -> NodeEmbedding:
    g, betas, hidden = {}, {}, {}
    for name, comp in model.components.items():
        w = walks[name]
        n = w.shape[1]
        gs, bs, hs = [], [], []
        for lo in range(0, n, batch_size):
            nodes = np.arange(lo, min(n, lo + batch_size))
            holders = np.repeat(nodes[:, None], w.shape[0], axis=1)
            gi, h, b, _ = comp.embed(w, holders)
            gs.append(gi)
            bs.append(b)
            hs.append(h)
        g[name] = np.concatenate(gs)
        betas[name] = np.concatenate(bs)
        hidden[name] = np.concatenate(hs)
    return NodeEmbedding(g=g, betas=betas, hidden=hidden)
