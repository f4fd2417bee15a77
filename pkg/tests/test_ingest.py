from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stdgnn.ingest import (
    DAY,
    HOUR,
    WEEK,
    EventKind,
    Granularity,
    IngestError,
    build_snapshots,
    filter_inactive,
    inactive_developers,
    parse_events,
    slice_bounds,
    tokenize,
    write_events,
    write_snapshots_csv,
)
from stdgnn.synthetic import DEFAULT_START

from conftest import fix, make_log, report, toss, write_jsonl


def test_empty_file(tmp_path):
    log = parse_events(write_jsonl(tmp_path / "e.jsonl", []))
    assert len(log.events) == 0 and log.reports == {}


def test_unreadable_file_is_fatal(tmp_path):
    with pytest.raises(IngestError):
        parse_events(tmp_path / "missing.jsonl")


THREE = [report("b1", 0), toss("b1", "d1", "d2", 10), fix("b1", "d2", 20)]


def test_three_line_log(tmp_path):
    log = parse_events(write_jsonl(tmp_path / "e.jsonl", THREE))
    assert len(log.events) == 3
    assert [e.kind for e in log.events] == [EventKind.REPORT, EventKind.TOSS, EventKind.FIX]
    rep = log.reports["b1"]
    assert rep.holder_sequence == ("d1", "d2")
    assert rep.fixer == "d2" == rep.holder_sequence[-1]
    assert rep.tokens == ("editor", "crash", "save")


def test_shuffled_lines_parse_identically(tmp_path):
    recs = THREE + [report("b2", 5, to="d3"), toss("b2", "d3", "d1", 15), fix("b2", "d1", 30)]
    a = parse_events(write_jsonl(tmp_path / "a.jsonl", recs))
    shuffled = recs[:]
    random.Random(4).shuffle(shuffled)
    b = parse_events(write_jsonl(tmp_path / "b.jsonl", shuffled))
    assert a == b
    ts = [e.timestamp for e in a.events]
    assert ts == sorted(ts)


def test_malformed_lines_are_counted(tmp_path):
    good = []
    for k in range(10):
        good += [report(f"b{k}", k), fix(f"b{k}", "d1", k + 1)]
    bad = [{"bug": "x", "kind": "teleport", "ts": 1}]
    log = parse_events(write_jsonl(tmp_path / "e.jsonl", good + bad))
    assert log.malformed == 1
    assert len(log.reports) == 10


def test_too_many_malformed_lines_is_fatal(tmp_path):
    recs = THREE + [{"bug": "x", "kind": "toss", "from": "a", "to": "a", "ts": 1}]
    with pytest.raises(IngestError, match="malformed"):
        parse_events(write_jsonl(tmp_path / "e.jsonl", recs))


def test_bug_without_fix_is_dropped(tmp_path):
    recs = THREE + [report("b2", 3), toss("b2", "d1", "d2", 4)]
    log = parse_events(write_jsonl(tmp_path / "e.jsonl", recs))
    assert set(log.reports) == {"b1"}
    assert {e.bug_id for e in log.events} == {"b1"}


def test_only_last_fix_is_kept(tmp_path):
    recs = THREE + [fix("b1", "d1", 40)]
    log = parse_events(write_jsonl(tmp_path / "e.jsonl", recs))
    fixes = [e for e in log.events if e.kind is EventKind.FIX]
    assert len(fixes) == 1 and fixes[0].to_dev == "d1"
    assert log.reports["b1"].fixer == "d1" == log.reports["b1"].holder_sequence[-1]


def test_write_parse_round_trip(tmp_path, small_synthetic):
    path = tmp_path / "e.jsonl"
    write_events(small_synthetic, path)
    assert parse_events(path) == small_synthetic


def test_tokenize():
    assert tokenize("The Editor CRASHES, on save()!  a x2") == ["editor", "crashes", "save", "x2"]


# filter_inactive -----------------------------------------------------------

YEAR_2021 = 1609459200
YEAR_2022 = 1640995200


def _fixes(dev, n, t0, prefix):
    return [(f"{prefix}{k}", [dev], t0 + k * DAY) for k in range(n)]


def test_filter_keeps_active_developers():
    log = make_log(_fixes("d1", 6, YEAR_2021, "a") + _fixes("d2", 7, YEAR_2021, "b"))
    assert filter_inactive(log, 5) == log


def test_filter_removes_developer_with_five_fixes():
    bugs = _fixes("d1", 6, YEAR_2021, "a") + _fixes("d2", 5, YEAR_2021, "b")
    bugs.append(("c0", ["d2", "d1"], YEAR_2021 + 50 * DAY))  # toss from d2 to d1, fixed by d1
    log = make_log(bugs)
    out = filter_inactive(log, 5)
    assert inactive_developers(log, 5) == ["d2"]
    assert "d2" not in out.developers
    assert all(e.from_dev != "d2" and e.to_dev != "d2" for e in out.events)
    # the bug d2 merely tossed survives, minus the toss
    assert out.reports["c0"].holder_sequence == ("d1",)


def test_filter_any_year_rule():
    log = make_log(_fixes("d1", 10, YEAR_2021, "a") + _fixes("d2", 6, YEAR_2022, "b"))
    assert "d1" in filter_inactive(log, 5).developers


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 800)), min_size=1, max_size=60))
def test_filter_is_idempotent(triples):
    bugs = []
    for k, (a, b, day) in enumerate(triples):
        path = [f"d{a}"] if a == b else [f"d{a}", f"d{b}"]
        bugs.append((f"b{k}", path, YEAR_2021 + day * DAY))
    log = make_log(bugs)
    once = filter_inactive(log, 2)
    assert filter_inactive(once, 2) == once


# snapshots ------------------------------------------------------------------

T0 = DEFAULT_START


def test_single_toss_snapshot():
    log = make_log([("b1", ["d1", "d2"], T0)])
    series = build_snapshots(log, Granularity.HOURLY, 1, 1)
    snap = series.snapshots[0]
    assert snap.adjacency.nnz == 1
    assert snap.weight("d1", "d2") == 1.0


def test_toss_counts_and_degrees():
    log = make_log([
        ("b1", ["d1", "d2"], T0),
        ("b2", ["d1", "d2"], T0 + 60),
        ("b3", ["d2", "d3"], T0 + 120),
    ], step=10)
    snap = build_snapshots(log, "hour", 1, 1).snapshots[0]
    assert snap.weight("d1", "d2") == 2.0
    assert snap.weight("d2", "d3") == 1.0
    idx = {d: i for i, d in enumerate(snap.node_ids)}
    assert snap.out_degree[idx["d1"]] == 1
    assert snap.in_degree[idx["d2"]] == 1
    assert snap.degree[idx["d2"]] == 2


def test_weekly_partition_of_four_week_log():
    bugs = [(f"b{w}", ["d1", "d2"], T0 + w * WEEK + DAY) for w in range(4)]
    log = make_log(bugs)
    series = build_snapshots(log, Granularity.WEEKLY, 1, 4)
    assert len(series) == 4
    bounds = series.boundaries
    assert bounds[0][0] == T0
    assert all(bounds[k][1] == bounds[k + 1][0] for k in range(3))
    assert [s.adjacency.sum() for s in series.snapshots] == [1, 1, 1, 1]


def test_too_short_log_names_required_span():
    log = make_log([("b1", ["d1", "d2"], T0)])
    with pytest.raises(IngestError, match="required"):
        build_snapshots(log, "day", 1, 3)


def test_week_bins_start_on_monday():
    lo, hi = slice_bounds(T0 + 3 * DAY, T0 + 3 * DAY, Granularity.WEEKLY, 1, 1)[0]
    assert lo == T0 and hi - lo == WEEK


def test_node_vocabulary_is_shared(small_synthetic):
    series = build_snapshots(small_synthetic, "day", 1, 5)
    assert len({s.node_ids for s in series.snapshots}) == 1
    assert all(s.adjacency.shape == (len(series.node_ids),) * 2 for s in series.snapshots)


def _covered_tosses(log, series):
    lo, hi = series.boundaries[0][0], series.boundaries[-1][1]
    return sum(lo <= e.timestamp < hi for e in log.tosses)


@pytest.mark.parametrize("gran,window,T", [("hour", 1, 30), ("hour", 3, 8), ("day", 1, 7), ("week", 1, 3)])
def test_weights_sum_to_covered_toss_count(small_synthetic, gran, window, T):
    series = build_snapshots(small_synthetic, gran, window, T)
    total = sum(s.adjacency.sum() for s in series.snapshots)
    assert total == _covered_tosses(small_synthetic, series)


def test_full_window_equals_toss_matrix(small_synthetic):
    span_weeks = (small_synthetic.events[-1].timestamp - small_synthetic.events[0].timestamp) // WEEK + 2
    series = build_snapshots(small_synthetic, "week", int(span_weeks), 1)
    idx = {d: i for i, d in enumerate(series.node_ids)}
    expected = np.zeros((len(idx), len(idx)))
    for e in small_synthetic.tosses:
        expected[idx[e.from_dev], idx[e.to_dev]] += 1
    np.testing.assert_array_equal(series.snapshots[0].adjacency.toarray(), expected)
    adj = series.snapshots[0].adjacency
    np.testing.assert_array_equal(series.snapshots[0].out_degree, (adj.toarray() > 0).sum(1))
    np.testing.assert_array_equal(series.snapshots[0].in_degree, (adj.toarray() > 0).sum(0))


def test_snapshot_csv(tmp_path):
    log = make_log([("b1", ["d1", "d2"], T0), ("b2", ["d2", "d1"], T0 + HOUR)])
    path = tmp_path / "s.csv"
    write_snapshots_csv(build_snapshots(log, "hour", 1, 2), path)
    assert path.read_text().splitlines() == ["t,src,dst,weight", "0,d1,d2,1", "1,d2,d1,1"]
