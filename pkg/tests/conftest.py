from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from scipy import sparse

from stdgnn.ingest import Event, EventKind, Snapshot, assemble_log
from stdgnn.synthetic import DEFAULT_START, SyntheticConfig, generate_synthetic


# criterion number -> (status, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")


def write_jsonl(path: Path, records: list[dict]) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def report(bug, ts, to=None, text="editor crash on save", component=None):
    rec = {"bug": bug, "kind": "report", "from": None, "to": to, "ts": ts, "text": text}
    if component is not None:
        rec["component"] = component
    return rec


def toss(bug, src, dst, ts):
    return {"bug": bug, "kind": "toss", "from": src, "to": dst, "ts": ts}


def fix(bug, dev, ts):
    return {"bug": bug, "kind": "fix", "from": None, "to": dev, "ts": ts}


def make_log(bugs: list[tuple[str, list[str], int]], text="editor crash on save", step=60):
    """In-memory log from (bug, holder path, start ts) triples; the last holder fixes."""
    events, texts = [], {}
    for bug, path, t0 in bugs:
        texts[bug] = text
        events.append(Event(bug, EventKind.REPORT, None, path[0], t0))
        for k in range(1, len(path)):
            events.append(Event(bug, EventKind.TOSS, path[k - 1], path[k], t0 + k * step))
        events.append(Event(bug, EventKind.FIX, None, path[-1], t0 + len(path) * step))
    return assemble_log(events, texts)


def snapshot(edges: dict[tuple[int, int], float], n: int) -> Snapshot:
    rows, cols = zip(*edges) if edges else ((), ())
    adj = sparse.csr_matrix((list(edges.values()), (rows, cols)), shape=(n, n))
    adj.sort_indices()
    return Snapshot(index=0, node_ids=tuple(f"d{k}" for k in range(n)), adjacency=adj, start=0, end=1)


def random_graph(n: int, seed: int, min_out: int = 2) -> Snapshot:
    rng = np.random.default_rng(seed)
    edges = {}
    for i in range(n):
        k = min(int(rng.integers(min_out, 6)), n - 1)
        for j in rng.choice([x for x in range(n) if x != i], size=k, replace=False):
            edges[(i, int(j))] = float(rng.integers(1, 10))
    return snapshot(edges, n)


def ring_graph(n: int, seed: int) -> Snapshot:
    """Directed ring plus 1-4 random chords per node: strongly connected, no sinks."""
    rng = np.random.default_rng(seed)
    edges = {}
    for i in range(n):
        edges[(i, (i + 1) % n)] = float(rng.integers(1, 10))
        others = [x for x in range(n) if x not in (i, (i + 1) % n)]
        for j in rng.choice(others, size=int(rng.integers(1, 5)), replace=False):
            edges[(i, int(j))] = float(rng.integers(1, 10))
    return snapshot(edges, n)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@pytest.fixture(scope="session")
def small_synthetic():
    cfg = SyntheticConfig(n_devs=12, n_bugs=150, n_components=3, weeks=3, start=DEFAULT_START)
    return generate_synthetic(cfg, seed=3)


DESK_T = {"hour": 6, "day": 3, "week": 2}


def toy_inputs(n_nodes=6, batch=5, L=48, T=DESK_T, seed=0, components=("hour", "day", "week")):
    """Random index walk tensors and holder sequences shaped like desk-profile inputs."""
    rng = np.random.default_rng(seed)
    walks = {c: rng.integers(0, n_nodes + 1, size=(T[c], n_nodes, L)) for c in components}
    holders = {c: rng.integers(0, n_nodes, size=(batch, T[c])) for c in components}
    return walks, holders
