"""Glue from an event log to model-ready walk tensors and task datasets."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .grcnn import COMPONENTS
from .ingest import EventLog, Granularity, SnapshotSeries, build_snapshots, filter_inactive, inactive_developers
from .jrwalk import series_walk_indices
from .tasks import TaskDataset, build_bfp_dataset, build_dap_dataset

log = logging.getLogger(__name__)

GRANULARITY = {"hour": Granularity.HOURLY, "day": Granularity.DAILY, "week": Granularity.WEEKLY}


@dataclass
class Prepared:
    log: EventLog
    removed: list[str]
    series: dict[str, SnapshotSeries]

    @property
    def node_ids(self) -> tuple[str, ...]:
        return next(iter(self.series.values())).node_ids

    @property
    def stats(self) -> dict:
        return {
            "events": len(self.log.events),
            "bugs": len(self.log.reports),
            "tosses": len(self.log.tosses),
            "developers": len(self.node_ids),
            "malformed_lines": self.log.malformed,
            "removed_inactive_developers": self.removed,
            "snapshot_edges": {
                c: [int(s.adjacency.nnz) for s in series.snapshots] for c, series in self.series.items()
            },
        }


def prepare(raw: EventLog, cfg: RunConfig) -> Prepared:
    removed = inactive_developers(raw, cfg.min_fixes_per_year)
    filtered = filter_inactive(raw, cfg.min_fixes_per_year)
    series = {
        comp: build_snapshots(filtered, GRANULARITY[comp], cfg.window_len, _slices(cfg, comp))
        for comp in COMPONENTS
        if comp in cfg.components
    }
    return Prepared(filtered, removed, series)


def _slices(cfg: RunConfig, comp: str) -> int:
    return {"hour": cfg.t_hour, "day": cfg.t_day, "week": cfg.t_week}[comp]


def make_walks(
    series: dict[str, SnapshotSeries], alpha: float, r: int, l: int, seed: int, threads: int = 1
) -> dict[str, np.ndarray]:
    return {
        comp: series_walk_indices(s, r, l, alpha, seed, threads=threads, salt=COMPONENTS.index(comp))
        for comp, s in series.items()
    }


def walks_for(prep: Prepared, cfg: RunConfig, **override) -> dict[str, np.ndarray]:
    alpha = float(override.get("alpha", cfg.alpha))
    r = int(override.get("r", cfg.r))
    l = int(override.get("l", cfg.l))
    return make_walks(prep.series, alpha, r, l, cfg.seed, cfg.threads)


def build_dataset(prep: Prepared, task: str) -> TaskDataset:
    if task == "dap":
        return build_dap_dataset(prep.log, prep.series)
    if task == "bfp":
        return build_bfp_dataset(prep.log, prep.series)
    raise ValueError(f"unknown task {task!r}")
