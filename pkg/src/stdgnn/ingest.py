"""Event-log ingestion, preprocessing filters and snapshot construction.

The on-disk log is JSON-lines, one event per line::

    {"bug": "b1", "kind": "report", "from": null, "to": "d1", "ts": 0,
     "text": "crash in editor", "component": "ui"}
    {"bug": "b1", "kind": "toss", "from": "d1", "to": "d2", "ts": 10}
    {"bug": "b1", "kind": "fix", "from": null, "to": "d2", "ts": 20}

``to`` on a report line is the optional initial assignee; ``component`` is
optional and only needed for developer-attribute labels.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

log = logging.getLogger(__name__)

HOUR = 3600
DAY = 24 * HOUR
WEEK = 7 * DAY
# 1970-01-05 00:00 UTC was a Monday; weekly bins start on Mondays.
WEEK_ORIGIN = 4 * DAY

MAX_MALFORMED_FRACTION = 0.10

STOP_WORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because been
    before being below between both but by can could did do does doing down during
    each few for from further had has have having he her here hers herself him
    himself his how i if in into is it its itself just me more most my myself no nor
    not now of off on once only or other our ours ourselves out over own same she
    should so some such than that the their theirs them themselves then there these
    they this those through to too under until up very was we were what when where
    which while who whom why will with would you your yours yourself yourselves
    also get got please thanks thank hi hello using use used
    """.split()
)

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


class EventKind(str, Enum):
    REPORT = "report"
    TOSS = "toss"
    FIX = "fix"


class Granularity(str, Enum):
    HOURLY = "hour"
    DAILY = "day"
    WEEKLY = "week"

    @property
    def seconds(self) -> int:
        return {"hour": HOUR, "day": DAY, "week": WEEK}[self.value]

    @property
    def origin(self) -> int:
        return WEEK_ORIGIN if self is Granularity.WEEKLY else 0


class IngestError(ValueError):
    """Raised when an event log cannot be turned into usable inputs."""


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop short tokens and stop words."""
    return [
        tok
        for tok in _TOKEN_SPLIT.split(text.lower())
        if len(tok) >= 2 and tok not in STOP_WORDS
    ]


@dataclass(frozen=True)
class Event:
    bug_id: str
    kind: EventKind
    from_dev: str | None
    to_dev: str | None
    timestamp: int

    def to_json(self, text: str | None = None, component: str | None = None) -> dict:
        rec = {
            "bug": self.bug_id,
            "kind": self.kind.value,
            "from": self.from_dev,
            "to": self.to_dev,
            "ts": self.timestamp,
        }
        if text is not None:
            rec["text"] = text
        if component is not None:
            rec["component"] = component
        return rec


@dataclass(frozen=True)
class BugReportText:
    bug_id: str
    tokens: tuple[str, ...]
    fixer: str
    holder_sequence: tuple[str, ...]
    component: str | None = None
    text: str = ""


@dataclass(frozen=True)
class EventLog:
    events: tuple[Event, ...]
    reports: dict[str, BugReportText] = field(default_factory=dict)
    malformed: int = 0

    @property
    def developers(self) -> list[str]:
        devs = set()
        for ev in self.events:
            if ev.from_dev is not None:
                devs.add(ev.from_dev)
            if ev.to_dev is not None:
                devs.add(ev.to_dev)
        return sorted(devs)

    @property
    def tosses(self) -> list[Event]:
        return [ev for ev in self.events if ev.kind is EventKind.TOSS]

    def __len__(self) -> int:
        return len(self.events)


def _holder_sequence(events: Sequence[Event]) -> list[str]:
    seq: list[str] = []
    for ev in events:
        if ev.kind is EventKind.REPORT:
            if ev.to_dev is not None and not seq:
                seq.append(ev.to_dev)
        elif ev.kind is EventKind.TOSS:
            if not seq or seq[-1] != ev.from_dev:
                seq.append(ev.from_dev)
            seq.append(ev.to_dev)
        elif ev.kind is EventKind.FIX:
            if not seq or seq[-1] != ev.to_dev:
                seq.append(ev.to_dev)
    return seq


def assemble_log(
    events: Iterable[Event],
    texts: dict[str, str],
    components: dict[str, str | None] | None = None,
    malformed: int = 0,
) -> EventLog:
    """Sort events and derive per-bug report records.

    Bugs without a report line, without any usable tokens, or without a fix are
    dropped. When a bug carries several fixes only the last one is kept.
    """
    components = components or {}
    by_bug: dict[str, list[Event]] = defaultdict(list)
    for ev in sorted(events, key=_event_sort_key):
        by_bug[ev.bug_id].append(ev)

    kept: list[Event] = []
    reports: dict[str, BugReportText] = {}
    for bug, evs in by_bug.items():
        if bug not in texts:
            continue
        tokens = tuple(tokenize(texts[bug]))
        fixes = [ev for ev in evs if ev.kind is EventKind.FIX]
        if not tokens or not fixes:
            continue
        last_fix = fixes[-1]
        evs = [ev for ev in evs if ev.kind is not EventKind.FIX or ev is last_fix]
        holders = _holder_sequence(evs)
        reports[bug] = BugReportText(
            bug_id=bug,
            tokens=tokens,
            fixer=last_fix.to_dev,
            holder_sequence=tuple(holders),
            component=components.get(bug),
            text=texts[bug],
        )
        kept.extend(evs)
    kept.sort(key=_event_sort_key)
    return EventLog(events=tuple(kept), reports=reports, malformed=malformed)


_KIND_ORDER = {EventKind.REPORT: 0, EventKind.TOSS: 1, EventKind.FIX: 2}


def _event_sort_key(ev: Event) -> tuple:
    return (ev.timestamp, ev.bug_id, _KIND_ORDER[ev.kind], ev.from_dev or "", ev.to_dev or "")


def _parse_record(rec: dict) -> tuple[Event, str | None, str | None]:
    kind = EventKind(rec["kind"])
    bug = rec["bug"]
    ts = rec["ts"]
    if not isinstance(bug, str) or not bug:
        raise ValueError("bug id must be a nonempty string")
    if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
        raise ValueError("ts must be a nonnegative integer")
    src, dst = rec.get("from"), rec.get("to")
    if kind is EventKind.TOSS:
        if not src or not dst or src == dst:
            raise ValueError("toss needs distinct from/to")
    elif kind is EventKind.FIX:
        if not dst:
            raise ValueError("fix needs a fixer")
        src = None
    else:
        src = None
        if not isinstance(rec["text"], str):
            raise ValueError("report needs text")
    event = Event(bug, kind, src, dst or None, ts)
    if kind is EventKind.REPORT:
        return event, rec["text"], rec.get("component")
    return event, None, None


def parse_events(path: str | Path) -> EventLog:
    """Read a JSON-lines event log.

    Malformed lines are skipped and counted; more than 10% malformed lines
    means the file is probably not an event log and raises ``IngestError``.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IngestError(f"cannot read event log {path}: {exc}") from exc

    events: list[Event] = []
    texts: dict[str, str] = {}
    components: dict[str, str | None] = {}
    malformed = 0
    total = 0
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        total += 1
        try:
            event, text, component = _parse_record(json.loads(line))
        except (ValueError, KeyError, TypeError) as exc:
            malformed += 1
            log.debug("%s:%d skipped: %s", path, lineno, exc)
            continue
        events.append(event)
        if text is not None:
            texts[event.bug_id] = text
            components[event.bug_id] = component
    if total and malformed / total > MAX_MALFORMED_FRACTION:
        raise IngestError(
            f"{path}: {malformed}/{total} malformed lines; is this an event log?"
        )
    if malformed:
        log.warning("%s: skipped %d malformed lines", path, malformed)
    return assemble_log(events, texts, components, malformed=malformed)


def write_events(log_: EventLog, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for ev in log_.events:
            rep = log_.reports.get(ev.bug_id)
            if ev.kind is EventKind.REPORT and rep is not None:
                rec = ev.to_json(text=rep.text, component=rep.component)
            else:
                rec = ev.to_json()
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def fixes_per_year(log_: EventLog) -> dict[str, Counter]:
    counts: dict[str, Counter] = defaultdict(Counter)
    for ev in log_.events:
        if ev.kind is EventKind.FIX:
            year = datetime.fromtimestamp(ev.timestamp, tz=timezone.utc).year
            counts[ev.to_dev][year] += 1
    return counts


def inactive_developers(log_: EventLog, min_fixes_per_year: int = 5) -> list[str]:
    """Developers with no calendar year above ``min_fixes_per_year`` fixes."""
    counts = fixes_per_year(log_)
    return [
        dev
        for dev in log_.developers
        if max(counts.get(dev, Counter()).values(), default=0) <= min_fixes_per_year
    ]


def filter_inactive(log_: EventLog, min_fixes_per_year: int = 5) -> EventLog:
    """Drop persistently inactive developers.

    A developer survives if at least one calendar year has more than
    ``min_fixes_per_year`` fixes. Bugs fixed by a removed developer are dropped
    whole; tosses with a removed endpoint are dropped so every remaining edge
    joins two surviving developers.
    """
    removed = set(inactive_developers(log_, min_fixes_per_year))
    if not removed:
        return log_
    events: list[Event] = []
    for ev in log_.events:
        rep = log_.reports[ev.bug_id]
        if rep.fixer in removed:
            continue
        if ev.kind is EventKind.TOSS and (ev.from_dev in removed or ev.to_dev in removed):
            continue
        if ev.kind is EventKind.REPORT and ev.to_dev in removed:
            ev = Event(ev.bug_id, ev.kind, None, None, ev.timestamp)
        events.append(ev)
    texts = {b: r.text for b, r in log_.reports.items()}
    components = {b: r.component for b, r in log_.reports.items()}
    return assemble_log(events, texts, components, malformed=log_.malformed)


@dataclass(frozen=True)
class Snapshot:
    index: int
    node_ids: tuple[str, ...]
    adjacency: sparse.csr_matrix
    start: int
    end: int

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def out_degree(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    @property
    def in_degree(self) -> np.ndarray:
        return np.bincount(self.adjacency.indices, minlength=self.n_nodes)

    @property
    def degree(self) -> np.ndarray:
        return self.out_degree + self.in_degree

    def weight(self, src: str, dst: str) -> float:
        idx = {d: i for i, d in enumerate(self.node_ids)}
        return float(self.adjacency[idx[src], idx[dst]])


@dataclass(frozen=True)
class SnapshotSeries:
    granularity: Granularity
    window_len: int
    snapshots: tuple[Snapshot, ...]

    @property
    def node_ids(self) -> tuple[str, ...]:
        return self.snapshots[0].node_ids

    @property
    def boundaries(self) -> list[tuple[int, int]]:
        return [(s.start, s.end) for s in self.snapshots]

    def __len__(self) -> int:
        return len(self.snapshots)


def slice_bounds(
    first_ts: int, last_ts: int, granularity: Granularity, window_len: int, T: int
) -> list[tuple[int, int]]:
    """Half-open ``[start, end)`` ranges of the last ``T`` windows of a log."""
    width = granularity.seconds * window_len
    origin = granularity.origin
    last_idx = (last_ts - origin) // width
    first_idx = (first_ts - origin) // width
    span = last_idx - first_idx + 1
    if span < T:
        raise IngestError(
            f"log spans {span} {granularity.value} windows of length {window_len}; "
            f"{T} required (need at least {T * width} s of history)"
        )
    starts = [origin + (last_idx - T + 1 + k) * width for k in range(T)]
    return [(s, s + width) for s in starts]


def build_snapshots(
    log_: EventLog,
    granularity: Granularity | str,
    window_len: int = 1,
    T: int = 1,
    node_ids: Sequence[str] | None = None,
) -> SnapshotSeries:
    """Toss-count snapshots over the last ``T`` windows of the log."""
    granularity = Granularity(granularity)
    if T < 1 or window_len < 1:
        raise IngestError("T and window_len must be >= 1")
    if not log_.events:
        raise IngestError("cannot build snapshots from an empty log")
    nodes = tuple(node_ids) if node_ids is not None else tuple(log_.developers)
    index = {d: i for i, d in enumerate(nodes)}
    bounds = slice_bounds(
        log_.events[0].timestamp, log_.events[-1].timestamp, granularity, window_len, T
    )
    tosses = log_.tosses
    ts = np.array([ev.timestamp for ev in tosses], dtype=np.int64)
    src = np.array([index[ev.from_dev] for ev in tosses], dtype=np.int64)
    dst = np.array([index[ev.to_dev] for ev in tosses], dtype=np.int64)
    n = len(nodes)
    snaps = []
    for t, (lo, hi) in enumerate(bounds):
        mask = (ts >= lo) & (ts < hi)
        adj = sparse.coo_matrix(
            (np.ones(int(mask.sum())), (src[mask], dst[mask])), shape=(n, n)
        ).tocsr()
        adj.sum_duplicates()
        adj.sort_indices()
        snaps.append(Snapshot(index=t, node_ids=nodes, adjacency=adj, start=lo, end=hi))
    return SnapshotSeries(granularity=granularity, window_len=window_len, snapshots=tuple(snaps))


def write_snapshots_csv(series: SnapshotSeries, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "src", "dst", "weight"])
        for snap in series.snapshots:
            coo = snap.adjacency.tocoo()
            order = np.lexsort((coo.col, coo.row))
            for k in order:
                writer.writerow(
                    [snap.index, snap.node_ids[coo.row[k]], snap.node_ids[coo.col[k]], int(coo.data[k])]
                )
