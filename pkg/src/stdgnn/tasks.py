"""Developer-attribute and bug-fixer prediction datasets.

Both tasks are node classification over per-slice walk blocks. A developer
instance reads its own walks at every slice; a bug instance reads the walks
of whoever held the bug at that slice and carries the report's topic vector.
"""

from __future__ import annotations

import csv
import json
import logging
import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .ingest import EventKind, EventLog, SnapshotSeries
from .textfeat import LdaModel, infer_topics

log = logging.getLogger(__name__)

OTHER = "__other__"


@dataclass
class TaskDataset:
    task: str
    ids: list[str]
    holders: dict[str, np.ndarray]  # component -> (n, T_c) node indices
    targets: list[str]  # raw class names (component or fixer id)
    node_ids: tuple[str, ...]
    tokens: list[tuple[str, ...]] | None = None
    z: np.ndarray | None = None
    flagged: np.ndarray | None = None
    excluded: int = 0

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, idx: np.ndarray) -> TaskDataset:
        idx = np.asarray(idx, dtype=np.int64)
        return TaskDataset(
            task=self.task,
            ids=[self.ids[i] for i in idx],
            holders={k: v[idx] for k, v in self.holders.items()},
            targets=[self.targets[i] for i in idx],
            node_ids=self.node_ids,
            tokens=None if self.tokens is None else [self.tokens[i] for i in idx],
            z=None if self.z is None else self.z[idx],
            flagged=None if self.flagged is None else self.flagged[idx],
        )

    def write_jsonl(self, path: str | Path, classes: Sequence[str] | None = None) -> None:
        classes = list(classes) if classes is not None else sorted(set(self.targets))
        index = {c: i for i, c in enumerate(classes)}
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for n, ident in enumerate(self.ids):
                rec = {
                    "id": ident,
                    "target": self.targets[n],
                    "label": index.get(self.targets[n], index.get(OTHER)),
                    "holders": {k: [self.node_ids[j] for j in v[n]] for k, v in self.holders.items()},
                }
                if self.z is not None:
                    rec["z"] = [float(x) for x in self.z[n]]
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def dap_label(components: Sequence[str]) -> tuple[str, bool]:
    """Most frequent component; ties go to the smallest component id (flagged)."""
    counts = Counter(components)
    top = max(counts.values())
    winners = sorted(c for c, n in counts.items() if n == top)
    return winners[0], len(winners) > 1


def build_dap_dataset(
    log_: EventLog, series: Mapping[str, SnapshotSeries], label_rule: str = "majority"
) -> TaskDataset:
    if label_rule != "majority":
        raise ValueError(f"unknown label rule {label_rule!r}")
    node_ids = next(iter(series.values())).node_ids
    fixed: dict[str, list[str]] = {}
    for rep in log_.reports.values():
        if rep.component is not None:
            fixed.setdefault(rep.fixer, []).append(rep.component)
    ids, targets, flags = [], [], []
    excluded = 0
    for dev in node_ids:
        if dev not in fixed:
            excluded += 1
            continue
        label, tie = dap_label(fixed[dev])
        ids.append(dev)
        targets.append(label)
        flags.append(tie)
    if excluded:
        log.info("DAP: %d developers without fixed bugs excluded", excluded)
    index = {d: i for i, d in enumerate(node_ids)}
    nodes = np.array([index[d] for d in ids], dtype=np.int64)
    holders = {c: np.repeat(nodes[:, None], len(s), axis=1) for c, s in series.items()}
    return TaskDataset("dap", ids, holders, targets, node_ids, flagged=np.array(flags, dtype=bool), excluded=excluded)


def holder_timeline(log_: EventLog, bug: str, hide_fixer: bool = True) -> list[tuple[int, str]]:
    """(time, developer) assignments of a bug in order.

    With ``hide_fixer`` the final hand-over to the fixer is dropped (when the
    bug changed hands at all), so the timeline never reveals the label.
    """
    events = [ev for ev in log_.events if ev.bug_id == bug]
    return _timeline(log_.reports[bug], events, hide_fixer)


def holders_per_slice(timeline: Sequence[tuple[int, str]], bounds: Sequence[tuple[int, int]]) -> list[str]:
    """Last holder assigned before each slice end; the first holder before the bug exists."""
    out = []
    for _, end in bounds:
        current = timeline[0][1]
        for ts, dev in timeline:
            if ts < end:
                current = dev
            else:
                break
        out.append(current)
    return out


def text_seed(tokens: Sequence[str]) -> int:
    return zlib.crc32(" ".join(tokens).encode("utf-8"))


def topic_matrix(model: LdaModel, docs: Sequence[Sequence[str]], iterations: int = 100) -> np.ndarray:
    """Topic vectors for many documents; equal texts get equal vectors."""
    cache: dict[tuple[str, ...], np.ndarray] = {}
    rows = []
    for doc in docs:
        key = tuple(doc)
        if key not in cache:
            cache[key] = infer_topics(model, key, iterations, seed=text_seed(key)).z
        rows.append(cache[key])
    return np.vstack(rows) if rows else np.zeros((0, model.n_topics))


def build_bfp_dataset(
    log_: EventLog,
    series: Mapping[str, SnapshotSeries],
    lda: LdaModel | None = None,
    hide_fixer: bool = True,
    infer_iterations: int = 100,
) -> TaskDataset:
    node_ids = next(iter(series.values())).node_ids
    index = {d: i for i, d in enumerate(node_ids)}
    by_bug: dict[str, list] = {}
    for ev in log_.events:
        by_bug.setdefault(ev.bug_id, []).append(ev)
    ids, targets, tokens = [], [], []
    holders = {c: [] for c in series}
    dropped = 0
    for bug in sorted(log_.reports):
        rep = log_.reports[bug]
        timeline = _timeline(rep, by_bug[bug], hide_fixer)
        if not timeline or any(dev not in index for _, dev in timeline):
            dropped += 1
            continue
        for comp, s in series.items():
            holders[comp].append([index[d] for d in holders_per_slice(timeline, s.boundaries)])
        ids.append(bug)
        targets.append(rep.fixer)
        tokens.append(rep.tokens)
    if dropped:
        log.info("BFP: %d bugs without a usable holder path dropped", dropped)
    ds = TaskDataset(
        "bfp",
        ids,
        {c: np.array(v, dtype=np.int64).reshape(len(ids), len(series[c])) for c, v in holders.items()},
        targets,
        node_ids,
        tokens=tokens,
        excluded=dropped,
    )
    if lda is not None:
        ds.z = topic_matrix(lda, tokens, infer_iterations)
    return ds


def _timeline(rep, events, hide_fixer: bool) -> list[tuple[int, str]]:
    seq = rep.holder_sequence
    if not seq:
        return []
    timeline = [(events[0].timestamp, seq[0])]
    for ev in events:
        if ev.kind is EventKind.TOSS:
            timeline.append((ev.timestamp, ev.to_dev))
        elif ev.kind is EventKind.FIX and ev.to_dev != timeline[-1][1]:
            timeline.append((ev.timestamp, ev.to_dev))
    if hide_fixer and len(timeline) > 1:
        timeline = timeline[:-1]
    return timeline


def make_mu(task: str, g: np.ndarray, z: np.ndarray | None = None) -> np.ndarray:
    if task == "dap":
        return np.asarray(g, dtype=np.float64)
    if task == "bfp":
        if z is None:
            raise ValueError("bug-fixer input needs a topic vector")
        return np.concatenate([np.asarray(g, dtype=np.float64), np.asarray(z, dtype=np.float64)], axis=-1)
    raise ValueError(f"unknown task {task!r}")


def bfp_classes(train_fixers: Sequence[str], min_fixer_count: int = 5) -> list[str]:
    """Fixers frequent enough in training get a class; the rest share ``OTHER``."""
    counts = Counter(train_fixers)
    return sorted(d for d, n in counts.items() if n >= min_fixer_count) + [OTHER]


def encode_targets(targets: Sequence[str], classes: Sequence[str]) -> np.ndarray:
    """Class indices; unknown targets map to ``OTHER`` if present, else -1."""
    index = {c: i for i, c in enumerate(classes)}
    fallback = index.get(OTHER, -1)
    return np.array([index.get(t, fallback) for t in targets], dtype=np.int64)


@dataclass(frozen=True)
class Prediction:
    scores: np.ndarray
    ranked: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "ranked", rank_classes(self.scores))


def rank_classes(scores: np.ndarray) -> np.ndarray:
    """Classes by descending score, ties to the lower index."""
    return np.argsort(-np.asarray(scores), axis=-1, kind="stable")


def predict_topk(pred: Prediction | np.ndarray, k: int) -> list[int]:
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = pred.ranked if isinstance(pred, Prediction) else rank_classes(pred)
    return [int(c) for c in ranked[:k]]


def topk_hits(scores: np.ndarray, labels: np.ndarray, k: int, exclude: int | None = None) -> np.ndarray:
    """Boolean hit per instance; an excluded class is never ranked."""
    scores = np.array(scores, dtype=np.float64)
    if exclude is not None and exclude >= 0:
        scores[:, exclude] = -np.inf
    ranked = rank_classes(scores)[:, :k]
    return (ranked == labels[:, None]).any(axis=1)


def write_predictions_csv(
    ids: Sequence[str], true: Sequence[str], scores: np.ndarray, classes: Sequence[str],
    path: str | Path, exclude: int | None = None, depth: int = 5,
) -> None:
    scores = np.array(scores, dtype=np.float64)
    if exclude is not None and exclude >= 0:
        scores[:, exclude] = -np.inf
    ranked = rank_classes(scores)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "true", *(f"rank{k + 1}" for k in range(depth))])
        for ident, t, row in zip(ids, true, ranked):
            names = [classes[c] for c in row[:depth]]
            w.writerow([ident, t, *names, *([""] * (depth - len(names)))])
