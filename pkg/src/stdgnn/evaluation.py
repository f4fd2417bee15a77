"""Monte Carlo cross-validation, accuracy@k and parameter sweeps."""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .grcnn import GrcnnConfig, train
from .tasks import OTHER, TaskDataset, bfp_classes, encode_targets, topic_matrix, topk_hits, write_predictions_csv
from .textfeat import fit_lda

log = logging.getLogger(__name__)


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class SplitPlan:
    train_frac: float = 0.7
    val_frac: float = 0.1
    repeats: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.train_frac < 1.0 and 0.0 <= self.val_frac < 1.0):
            raise ValueError("fractions must lie in (0, 1)")
        if self.train_frac + self.val_frac >= 1.0 + 1e-12:
            raise ValueError("train + val fractions must leave room for a test set")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    @property
    def test_frac(self) -> float:
        return round(1.0 - self.train_frac - self.val_frac, 10)


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def _allocate(sizes: np.ndarray, frac: float, total: int) -> np.ndarray:
    """Per-class quotas within 1 of ``frac * size`` that add up to ``total``."""
    exact = sizes * frac
    quota = np.floor(exact).astype(np.int64)
    short = total - int(quota.sum())
    remainder = exact - quota
    for k in np.argsort(-remainder, kind="stable"):
        if short <= 0:
            break
        if quota[k] < sizes[k]:
            quota[k] += 1
            short -= 1
    return quota


def make_splits(labels: Sequence, plan: SplitPlan) -> list[Split]:
    """Stratified train/val/test index sets, one per repeat.

    Classes with fewer than three instances stay whole in the training set.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ExperimentError("cannot split an empty dataset")
    classes = sorted(set(labels.tolist()))
    members = [np.flatnonzero(labels == c) for c in classes]
    small = [len(m) < 3 for m in members]
    if any(small):
        log.warning("%d classes with < 3 instances kept whole in train", sum(small))
    big = [m for m, s in zip(members, small) if not s]
    sizes = np.array([len(m) for m in big], dtype=np.int64)
    n_big = int(sizes.sum())
    quota_train = _allocate(sizes, plan.train_frac, round(plan.train_frac * n_big))
    rest = sizes - quota_train
    val_share = plan.val_frac / (1.0 - plan.train_frac)
    quota_val = _allocate(rest, val_share, round(plan.val_frac * n_big)) if n_big else rest

    splits = []
    for rep in range(plan.repeats):
        rng = np.random.default_rng([plan.seed, rep])
        tr, va, te = [], [], []
        for m, s in zip(members, small):
            if s:
                tr.append(m)
        for k, m in enumerate(big):
            perm = rng.permutation(m)
            a, b = quota_train[k], quota_train[k] + quota_val[k]
            tr.append(perm[:a])
            va.append(perm[a:b])
            te.append(perm[b:])
        cat = lambda parts: np.sort(np.concatenate(parts)) if parts else np.zeros(0, np.int64)
        split = Split(cat(tr), cat(va), cat(te))
        assert not (set(split.train) & set(split.val) or set(split.train) & set(split.test)
                    or set(split.val) & set(split.test)), "split overlap"
        splits.append(split)
    return splits


def frequency_ranking(train_labels: Sequence[int], n_classes: int, exclude: int | None = None) -> np.ndarray:
    counts = np.bincount(np.asarray(train_labels, dtype=np.int64), minlength=n_classes).astype(np.float64)
    if exclude is not None and exclude >= 0:
        counts[exclude] = -np.inf
    return counts


def frequency_baseline(
    train_labels: Sequence[int], test_labels: Sequence[int], ks: Sequence[int] = (1,),
    n_classes: int | None = None, exclude: int | None = None,
) -> dict[int, float]:
    """Accuracy@k of ranking every test instance by training class frequency."""
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    if train_labels.size == 0:
        raise ExperimentError("frequency baseline needs training labels")
    n_classes = n_classes or int(max(train_labels.max(), test_labels.max(initial=0)) + 1)
    scores = np.tile(frequency_ranking(train_labels, n_classes, exclude), (len(test_labels), 1))
    return {k: float(topk_hits(scores, test_labels, k).mean()) if len(test_labels) else float("nan") for k in ks}


def summarize(values: Sequence[float]) -> tuple[float, float]:
    vals = [v for v in values if not math.isnan(v)]
    if not vals:
        return float("nan"), float("nan")
    mean = statistics.fmean(vals)
    sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return mean, sd


@dataclass
class ExperimentReport:
    task: str
    plan: dict
    config: dict
    topk: list[int]
    repeats: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0

    def metric_values(self, metric: str) -> list[float]:
        return [r["metrics"][metric] for r in self.repeats if not r["failed"]]

    def baseline_values(self, metric: str) -> list[float]:
        return [r["baseline"][metric] for r in self.repeats if not r["failed"]]

    @property
    def summary(self) -> dict:
        out = {}
        for k in self.topk:
            m = f"top{k}"
            mean, sd = summarize(self.metric_values(m))
            bmean, bsd = summarize(self.baseline_values(m))
            out[m] = {"mean": mean, "sd": sd, "baseline_mean": bmean, "baseline_sd": bsd}
        return out

    @property
    def failures(self) -> int:
        return sum(r["failed"] for r in self.repeats)

    def to_json(self) -> dict:
        """Everything except wall-clock time, so reruns compare byte-for-byte."""
        return {
            "task": self.task,
            "plan": self.plan,
            "config": self.config,
            "topk": self.topk,
            "repeats": self.repeats,
            "summary": self.summary,
        }

    def write(self, outdir: str | Path, stem: str = "report") -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / f"{stem}.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        with (outdir / f"{stem}_summary.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["task", "split", "repeat", "metric", "value"])
            split = f"{self.plan['train_frac']:g}"
            for r in self.repeats:
                if r["failed"]:
                    continue
                for metric, value in r["metrics"].items():
                    w.writerow([self.task, split, r["repeat"], metric, repr(value)])
                for metric, value in r["baseline"].items():
                    w.writerow([self.task, split, r["repeat"], f"baseline_{metric}", repr(value)])


@dataclass(frozen=True)
class TextSettings:
    n_topics: int = 10
    iterations: int = 200
    infer_iterations: int = 100


def run_repeat(
    dataset: TaskDataset,
    walks: Mapping[str, np.ndarray],
    cfg: GrcnnConfig,
    split: Split,
    targets: Sequence[str],
    seed: int,
    topk: Sequence[int],
    text: TextSettings,
    min_fixer_count: int,
    predictions_path: Path | None = None,
) -> dict:
    train_targets = [targets[i] for i in split.train]
    if dataset.task == "bfp":
        classes = bfp_classes(train_targets, min_fixer_count)
        exclude = classes.index(OTHER)
        lda = fit_lda([dataset.tokens[i] for i in split.train], text.n_topics, text.iterations, seed)
        z = topic_matrix(lda, dataset.tokens, text.infer_iterations)
    else:
        classes = sorted(set(train_targets))
        exclude = None
        z = None
    labels = encode_targets(targets, classes)

    def usable(idx):
        idx = idx[labels[idx] >= 0]
        if exclude is not None:
            idx = idx[labels[idx] != exclude]
        return idx

    val_idx = split.val[labels[split.val] >= 0]
    test_idx = usable(split.test)
    unseen = int((labels[split.test] < 0).sum())
    if unseen:
        log.warning("%d test instances with classes unseen in training skipped", unseen)

    hold = lambda idx: {k: v[idx] for k, v in dataset.holders.items()}
    ex = lambda idx: None if z is None else z[idx]
    model, hist = train(
        cfg, walks, hold(split.train), labels[split.train], len(classes), ex(split.train),
        val=(hold(val_idx), labels[val_idx], ex(val_idx)) if len(val_idx) else None,
        seed=seed,
    )
    scores = model.predict(walks, hold(test_idx), ex(test_idx))
    y = labels[test_idx]
    metrics = {f"top{k}": float(topk_hits(scores, y, k, exclude).mean()) if len(y) else float("nan") for k in topk}
    base = frequency_baseline(labels[split.train], y, topk, len(classes), exclude)
    if predictions_path is not None:
        write_predictions_csv([dataset.ids[i] for i in test_idx], [targets[i] for i in test_idx],
                              scores, classes, predictions_path, exclude)
    return {
        "n_train": int(len(split.train)),
        "n_val": int(len(val_idx)),
        "n_test": int(len(split.test)),
        "n_scored": int(len(test_idx)),
        "n_classes": len(classes) - (1 if exclude is not None else 0),
        "metrics": metrics,
        "baseline": {f"top{k}": v for k, v in base.items()},
        "epochs": len(hist.epoch),
        "best_epoch": hist.best_epoch,
        "final_train_loss": hist.train_loss[-1],
    }


def run_experiment(
    dataset: TaskDataset,
    walks: Mapping[str, np.ndarray],
    cfg: GrcnnConfig,
    plan: SplitPlan,
    topk: Sequence[int] = (1, 3, 5),
    text: TextSettings = TextSettings(),
    min_fixer_count: int = 5,
    shuffle_labels: bool = False,
    predictions_dir: str | Path | None = None,
) -> ExperimentReport:
    """Train and test once per Monte Carlo repeat, then aggregate.

    A failing repeat is recorded and skipped; three failures abort.
    """
    if len(dataset) == 0:
        raise ExperimentError("empty dataset")
    started = time.perf_counter()
    targets = list(dataset.targets)
    if shuffle_labels:
        targets = [targets[i] for i in np.random.default_rng([plan.seed, 12345]).permutation(len(targets))]
    splits = make_splits(targets, plan)
    report = ExperimentReport(dataset.task, asdict(plan), cfg.to_dict(), list(topk))
    for rep, split in enumerate(splits):
        seed = plan.seed * 1000 + rep
        pred_path = None if predictions_dir is None else Path(predictions_dir) / f"predictions_r{rep}.csv"
        try:
            rec = run_repeat(dataset, walks, cfg, split, targets, seed, topk, text, min_fixer_count, pred_path)
            rec.update(repeat=rep, failed=False)
        except Exception as exc:  # noqa: BLE001 - one bad seed must not kill a sweep
            log.error("repeat %d failed: %s", rep, exc)
            rec = {"repeat": rep, "failed": True, "error": str(exc)}
        report.repeats.append(rec)
        if report.failures >= 3:
            raise ExperimentError(f"{report.failures} repeats failed; last error: {rec.get('error')}")
        if not rec["failed"]:
            log.info("repeat %d: %s (baseline %s)", rep, rec["metrics"], rec["baseline"])
    report.wall_clock = time.perf_counter() - started
    return report


SWEEP_PARAMETERS = ("alpha", "r", "l")


def parse_grid(spec: str) -> list[float]:
    """``"0:1:0.1"`` (inclusive range) or ``"1,2,4"``."""
    spec = spec.strip()
    if ":" in spec:
        lo, hi, step = (float(x) for x in spec.split(":"))
        if step <= 0 or hi < lo:
            raise ValueError(f"bad range {spec!r}")
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return [round(lo + k * step, 12) for k in range(n)]
    return [float(x) for x in spec.split(",") if x.strip()]


def sensitivity_sweep(
    parameter: str,
    grid: Sequence[float],
    make_walks: Callable[[str, float], Mapping[str, np.ndarray]],
    dataset: TaskDataset,
    cfg: GrcnnConfig,
    plan: SplitPlan,
    metric: str = "top1",
    **kwargs,
) -> list[tuple[float, float, float]]:
    """One experiment per grid value with every other setting held fixed."""
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r}")
    if not grid:
        raise ValueError("empty grid")
    if parameter == "alpha" and any(not 0.0 <= v <= 1.0 for v in grid):
        raise ValueError("alpha grid must lie in [0, 1]")
    if parameter in ("r", "l") and any(v < 1 or v != int(v) for v in grid):
        raise ValueError(f"{parameter} grid must hold positive integers")
    rows = []
    for value in grid:
        walks = make_walks(parameter, value)
        rep = run_experiment(dataset, walks, cfg, plan, **kwargs)
        mean, sd = summarize(rep.metric_values(metric))
        rows.append((value, mean, sd))
        log.info("%s=%g: %s=%.4f +- %.4f", parameter, value, metric, mean, sd)
    return rows


def write_curve_csv(rows: Sequence[tuple[float, float, float]], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "mean_acc", "sd"])
        for value, mean, sd in rows:
            w.writerow([f"{value:g}", repr(mean), repr(sd)])
