"""Joint random walks over DCN snapshots.

Each step flips a coin with head probability ``alpha``: heads samples the
next node in proportion to outgoing edge weight, tails in proportion to the
total (in + out) degree of the candidate neighbours. Both distributions live
in per-node alias tables so each step is O(1).
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import Snapshot, SnapshotSeries


class WalkError(ValueError):
    pass


@dataclass(frozen=True)
class AliasTable:
    prob: np.ndarray
    alias: np.ndarray

    @property
    def n(self) -> int:
        return len(self.prob)

    def reconstruct(self) -> np.ndarray:
        out = self.prob.copy()
        np.add.at(out, self.alias, 1.0 - self.prob)
        return out / self.n

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray | int:
        if size is None:
            k = int(rng.random() * self.n)
            return k if rng.random() < self.prob[k] else int(self.alias[k])
        k = (rng.random(size) * self.n).astype(np.int64)
        keep = rng.random(size) < self.prob[k]
        return np.where(keep, k, self.alias[k])


def build_alias(p: Sequence[float]) -> AliasTable:
    """Vose's alias method, O(n) construction."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise WalkError("probability vector must be 1-D and nonempty")
    if np.any(p < 0) or not np.isfinite(p).all():
        raise WalkError("probabilities must be finite and nonnegative")
    total = p.sum()
    if total <= 0:
        raise WalkError("probabilities sum to zero")
    n = p.size
    scaled = p * (n / total)
    prob = np.ones(n)
    alias = np.arange(n)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    # leftovers are 1 up to rounding
    for i in small + large:
        prob[i] = 1.0
        alias[i] = i
    return AliasTable(prob=prob, alias=alias)


@dataclass(frozen=True)
class TransitionTables:
    n_nodes: int
    neighbors: tuple[np.ndarray, ...]
    edge_probs: tuple[np.ndarray, ...]
    degree_probs: tuple[np.ndarray, ...]
    edge_alias: tuple[AliasTable | None, ...]
    degree_alias: tuple[AliasTable | None, ...]

    @property
    def sinks(self) -> np.ndarray:
        return np.array([len(nb) == 0 for nb in self.neighbors])

    @property
    def pad(self) -> int:
        return self.n_nodes


def build_transition(snap: Snapshot) -> TransitionTables:
    adj = snap.adjacency
    degree = snap.degree.astype(np.float64)
    neighbors, pe, pv, ae, av = [], [], [], [], []
    for i in range(snap.n_nodes):
        lo, hi = adj.indptr[i], adj.indptr[i + 1]
        nb = adj.indices[lo:hi].astype(np.int64)
        neighbors.append(nb)
        if len(nb) == 0:
            pe.append(np.empty(0))
            pv.append(np.empty(0))
            ae.append(None)
            av.append(None)
            continue
        w = adj.data[lo:hi].astype(np.float64)
        d = degree[nb]
        pe.append(w / w.sum())
        pv.append(d / d.sum())
        ae.append(build_alias(pe[-1]))
        av.append(build_alias(pv[-1]))
    return TransitionTables(
        n_nodes=snap.n_nodes,
        neighbors=tuple(neighbors),
        edge_probs=tuple(pe),
        degree_probs=tuple(pv),
        edge_alias=tuple(ae),
        degree_alias=tuple(av),
    )


@dataclass(frozen=True)
class WalkSet:
    start: int
    walks: np.ndarray  # (r, l), PAD = n_nodes


def jrwalk(
    tables: TransitionTables,
    i: int,
    r: int,
    l: int,
    alpha: float,
    rng: np.random.Generator,
) -> WalkSet:
    """``r`` joint random walks of exactly ``l`` nodes from ``i``.

    A walk that reaches a node without out-neighbours stops there and the
    remaining positions hold the PAD index.
    """
    if not 0.0 <= alpha <= 1.0:
        raise WalkError(f"alpha must lie in [0, 1], got {alpha}")
    if r < 1 or l < 1:
        raise WalkError("r and l must be >= 1")
    if not 0 <= i < tables.n_nodes:
        raise WalkError(f"unknown start node {i}")
    walks = np.full((r, l), tables.pad, dtype=np.int64)
    for j in range(r):
        u = rng.random((l - 1, 3))
        cur = i
        walks[j, 0] = cur
        for k in range(1, l):
            nb = tables.neighbors[cur]
            if len(nb) == 0:
                break
            coin, u1, u2 = u[k - 1]
            table = tables.edge_alias[cur] if alpha > coin else tables.degree_alias[cur]
            col = int(u1 * table.n)
            if u2 >= table.prob[col]:
                col = int(table.alias[col])
            cur = int(nb[col])
            walks[j, k] = cur
    return WalkSet(start=i, walks=walks)


def component_slice_key(salt: int, index: int) -> int:
    return salt * 100003 + index


def node_rng(seed: int, slice_key: int, node: int) -> np.random.Generator:
    return np.random.default_rng([seed, slice_key, node])


def walk_all(
    tables: TransitionTables,
    r: int,
    l: int,
    alpha: float,
    seed: int,
    slice_key: int = 0,
    threads: int = 1,
) -> list[WalkSet]:
    """Walks for every node; each node draws from its own seeded stream."""

    def one(node: int) -> WalkSet:
        return jrwalk(tables, node, r, l, alpha, node_rng(seed, slice_key, node))

    nodes = range(tables.n_nodes)
    if threads <= 1:
        return [one(n) for n in nodes]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, nodes))


class Encoding(str, Enum):
    ONE_HOT = "onehot"
    EMBEDDING_INDEX = "index"


@dataclass(frozen=True)
class WalkTensor:
    encoding: Encoding
    data: np.ndarray  # OneHot: (N, l*r, a_v) floats; EmbeddingIndex: (N, l*r) ints
    n_nodes: int

    @property
    def shape(self) -> tuple[int, int, int]:
        if self.encoding is Encoding.ONE_HOT:
            return self.data.shape
        return (*self.data.shape, self.n_nodes)


def walks_to_tensor(
    all_walks: Sequence[WalkSet],
    encoding: Encoding | str = Encoding.EMBEDDING_INDEX,
    a_v: int | None = None,
) -> WalkTensor:
    encoding = Encoding(encoding)
    if not all_walks:
        raise WalkError("no walks given")
    shape = all_walks[0].walks.shape
    if any(ws.walks.shape != shape for ws in all_walks):
        raise WalkError("walk sets disagree on r or l")
    n = len(all_walks)
    idx = np.stack([ws.walks.reshape(-1) for ws in all_walks])  # (N, r*l)
    if encoding is Encoding.EMBEDDING_INDEX:
        return WalkTensor(encoding, idx, n)
    a_v = n if a_v is None else a_v
    if a_v != n:
        raise WalkError("one-hot encoding needs a_v == N")
    table = np.vstack([np.eye(n), np.zeros((1, n))])
    return WalkTensor(encoding, table[idx], n)


def series_walk_indices(
    series: SnapshotSeries,
    r: int,
    l: int,
    alpha: float,
    seed: int,
    threads: int = 1,
    salt: int = 0,
) -> np.ndarray:
    """Index-encoded walk tensors for every slice, shape (T, N, l*r)."""
    out = []
    for snap in series.snapshots:
        tables = build_transition(snap)
        walks = walk_all(tables, r, l, alpha, seed, slice_key=component_slice_key(salt, snap.index), threads=threads)
        out.append(walks_to_tensor(walks).data)
    return np.stack(out)


def write_walks_csv(all_walks: Sequence[WalkSet], path: str | Path, pad: int) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node", "walk_idx", "step", "visited"])
        for ws in all_walks:
            for j, walk in enumerate(ws.walks):
                for k, v in enumerate(walk):
                    writer.writerow([ws.start, j, k, -1 if v == pad else int(v)])
