"""Bug-report topic features from LDA fitted by collapsed Gibbs sampling.

The sampler kernels are compiled with numba; uniforms are drawn up front
from a numpy ``Generator`` so results only depend on the seed.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

_MAGIC = b"STDGNNLD"


@numba.njit(cache=True)
def _sweep(words, docs, z, ndk, nkw, nk, alpha, beta, v_beta, uniforms, frozen):
    n_topics = nk.shape[0]
    p = np.empty(n_topics)
    for n in range(words.shape[0]):
        w, d, k = words[n], docs[n], z[n]
        ndk[d, k] -= 1
        if not frozen:
            nkw[k, w] -= 1
            nk[k] -= 1
        total = 0.0
        for t in range(n_topics):
            total += (ndk[d, t] + alpha) * (nkw[t, w] + beta) / (nk[t] + v_beta)
            p[t] = total
        u = uniforms[n] * total
        k = 0
        while k < n_topics - 1 and p[k] <= u:
            k += 1
        z[n] = k
        ndk[d, k] += 1
        if not frozen:
            nkw[k, w] += 1
            nk[k] += 1


@dataclass
class LdaModel:
    n_topics: int
    alpha: float
    beta: float
    vocabulary: dict[str, int]
    topic_word: np.ndarray  # (K, V) counts
    doc_topic: np.ndarray  # (D, K) counts of the training documents

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def phi(self) -> np.ndarray:
        """Smoothed topic-word distributions, rows sum to 1."""
        num = self.topic_word + self.beta
        return num / num.sum(axis=1, keepdims=True)

    def theta(self) -> np.ndarray:
        num = self.doc_topic + self.alpha
        return num / num.sum(axis=1, keepdims=True)

    def save(self, path: str | Path) -> None:
        header = {
            "K": self.n_topics,
            "alpha": self.alpha,
            "beta": self.beta,
            "vocabulary": sorted(self.vocabulary, key=self.vocabulary.get),
            "n_docs": int(self.doc_topic.shape[0]),
        }
        blob = json.dumps(header).encode("utf-8")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as fh:
            fh.write(_MAGIC + struct.pack("<Q", len(blob)) + blob)
            fh.write(self.topic_word.astype("<i8").tobytes())
            fh.write(self.doc_topic.astype("<i8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> LdaModel:
        raw = Path(path).read_bytes()
        if raw[:8] != _MAGIC:
            raise ValueError(f"{path} is not an LDA dump")
        (hlen,) = struct.unpack("<Q", raw[8:16])
        h = json.loads(raw[16 : 16 + hlen])
        k, v, d = h["K"], len(h["vocabulary"]), h["n_docs"]
        off = 16 + hlen
        tw = np.frombuffer(raw, "<i8", k * v, off).reshape(k, v).astype(np.int64)
        dt = np.frombuffer(raw, "<i8", d * k, off + 8 * k * v).reshape(d, k).astype(np.int64)
        vocab = {w: i for i, w in enumerate(h["vocabulary"])}
        return cls(k, h["alpha"], h["beta"], vocab, tw, dt)


def _flatten(corpus_ids: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    words = np.concatenate([np.asarray(d, dtype=np.int64) for d in corpus_ids]) if corpus_ids else np.zeros(0, np.int64)
    docs = np.repeat(np.arange(len(corpus_ids)), [len(d) for d in corpus_ids]).astype(np.int64)
    return words, docs


class LdaState:
    """Mutable sampler state; exposed so sweeps can be inspected one at a time."""

    def __init__(self, corpus: Sequence[Sequence[str]], n_topics: int, seed: int):
        if not corpus or not any(len(d) for d in corpus):
            raise ValueError("LDA needs a nonempty corpus")
        if n_topics < 2:
            raise ValueError("LDA needs at least two topics")
        self.vocabulary: dict[str, int] = {}
        for doc in corpus:
            for tok in doc:
                self.vocabulary.setdefault(tok, len(self.vocabulary))
        ids = [np.array([self.vocabulary[t] for t in doc], dtype=np.int64) for doc in corpus]
        self.words, self.docs = _flatten(ids)
        self.n_topics = n_topics
        self.alpha = self.beta = 1.0 / n_topics
        self.rng = np.random.default_rng(seed)
        self.z = self.rng.integers(0, n_topics, size=len(self.words)).astype(np.int64)
        self.ndk = np.zeros((len(corpus), n_topics), dtype=np.int64)
        self.nkw = np.zeros((n_topics, len(self.vocabulary)), dtype=np.int64)
        np.add.at(self.ndk, (self.docs, self.z), 1)
        np.add.at(self.nkw, (self.z, self.words), 1)
        self.nk = self.nkw.sum(axis=1)

    def sweep(self) -> None:
        u = self.rng.random(len(self.words))
        _sweep(self.words, self.docs, self.z, self.ndk, self.nkw, self.nk,
               self.alpha, self.beta, self.beta * len(self.vocabulary), u, False)

    def model(self) -> LdaModel:
        return LdaModel(self.n_topics, self.alpha, self.beta, dict(self.vocabulary),
                        self.nkw.copy(), self.ndk.copy())


def fit_lda(corpus: Sequence[Sequence[str]], n_topics: int, iterations: int = 500, seed: int = 0) -> LdaModel:
    state = LdaState(corpus, n_topics, seed)
    for _ in range(iterations):
        state.sweep()
    return state.model()


@dataclass(frozen=True)
class TopicVector:
    z: np.ndarray
    fallback: bool = False


def infer_topics(
    model: LdaModel, doc: Sequence[str], iterations: int = 100, seed: int = 0, burn_in: int | None = None
) -> TopicVector:
    """Fold-in Gibbs with frozen topic-word counts.

    Returns smoothed document-topic proportions averaged over the sweeps after
    burn-in (the last 50 by default). A document with no known token gets
    the uniform vector and ``fallback=True``.
    """
    k = model.n_topics
    ids = np.array([model.vocabulary[t] for t in doc if t in model.vocabulary], dtype=np.int64)
    if ids.size == 0:
        return TopicVector(np.full(k, 1.0 / k), fallback=True)
    burn_in = max(0, iterations - 50) if burn_in is None else burn_in
    rng = np.random.default_rng(seed)
    z = rng.integers(0, k, size=ids.size).astype(np.int64)
    docs = np.zeros(ids.size, dtype=np.int64)
    ndk = np.zeros((1, k), dtype=np.int64)
    np.add.at(ndk[0], z, 1)
    nkw = model.topic_word
    nk = nkw.sum(axis=1)
    v_beta = model.beta * model.vocab_size
    acc = np.zeros(k)
    kept = 0
    for it in range(iterations):
        _sweep(ids, docs, z, ndk, nkw, nk, model.alpha, model.beta, v_beta, rng.random(ids.size), True)
        if it >= burn_in:
            acc += (ndk[0] + model.alpha) / (ids.size + k * model.alpha)
            kept += 1
    if kept == 0:
        acc = (ndk[0] + model.alpha) / (ids.size + k * model.alpha)
        kept = 1
    vec = acc / kept
    return TopicVector(vec / vec.sum())


def perplexity(model: LdaModel, docs: Sequence[Sequence[str]], iterations: int = 60, seed: int = 0) -> float:
    """Held-out perplexity with fold-in document mixtures."""
    phi = model.phi()
    log_lik, count = 0.0, 0
    for j, doc in enumerate(docs):
        theta = infer_topics(model, doc, iterations, seed=seed + j).z
        for tok in doc:
            w = model.vocabulary.get(tok)
            if w is None:
                continue
            log_lik += np.log(theta @ phi[:, w])
            count += 1
    return float(np.exp(-log_lik / max(count, 1)))


def write_topics_csv(ids: Sequence[str], vectors: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bug_id", *(f"t{k}" for k in range(vectors.shape[1]))])
        for bug, vec in zip(ids, vectors):
            w.writerow([bug, *(repr(float(v)) for v in vec)])
