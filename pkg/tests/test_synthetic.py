from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from stdgnn.ingest import WEEK, IngestError, write_events
from stdgnn.synthetic import DEFAULT_START, SyntheticConfig, default_intensity, generate_synthetic, is_weekend


def test_same_seed_byte_identical(tmp_path):
    cfg = SyntheticConfig(n_bugs=80)
    write_events(generate_synthetic(cfg, 1), tmp_path / "a.jsonl")
    write_events(generate_synthetic(cfg, 1), tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    write_events(generate_synthetic(cfg, 2), tmp_path / "c.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() != (tmp_path / "c.jsonl").read_bytes()


def test_flat_profile_is_uniform_over_the_week():
    cfg = SyntheticConfig(n_devs=12, n_bugs=36000, weeks=4, intensity_profile=np.ones(168))
    log = generate_synthetic(cfg, 5)
    ts = np.array([e.timestamp for e in log.events])
    ts = np.random.default_rng(0).choice(ts, 100_000, replace=False)
    pos = ((ts - DEFAULT_START) % WEEK) / WEEK
    assert stats.kstest(pos, "uniform").pvalue > 0.01


def test_zero_weekend_rate():
    prof = default_intensity()
    prof[5 * 24:] = 0.0
    log = generate_synthetic(SyntheticConfig(n_bugs=300, intensity_profile=prof), 2)
    ts = np.array([e.timestamp for e in log.events])
    assert not is_weekend(ts).any()


def test_planted_structure():
    log = generate_synthetic(SyntheticConfig(), 1)
    home = {}
    for rep in log.reports.values():
        home.setdefault(rep.fixer, []).append(rep.component)
    # every fixer only fixes bugs of one component
    assert all(len(set(c)) == 1 for c in home.values())
    assert all(rep.fixer == rep.holder_sequence[-1] for rep in log.reports.values())
    assert len(log.tosses) > len(log.reports) * 0.5


@pytest.mark.parametrize("kw", [dict(n_devs=2), dict(n_bugs=0), dict(n_components=0), dict(weeks=0),
                                dict(intensity_profile=np.ones(10)), dict(intensity_profile=np.zeros(168))])
def test_invalid_config(kw):
    with pytest.raises(IngestError):
        generate_synthetic(SyntheticConfig(**kw), 0)


def test_config_file(tmp_path):
    path = tmp_path / "syn.cfg"
    path.write_text("n_devs = 9\nn_bugs = 40\nn_components = 2\nweeks = 2\nintensity_profile = default\n")
    cfg = SyntheticConfig.from_file(path)
    assert (cfg.n_devs, cfg.n_bugs, cfg.n_components, cfg.weeks) == (9, 40, 2, 2)
    path.write_text("intensity_profile = " + ",".join(["1"] * 168) + "\n")
    assert SyntheticConfig.from_file(path).intensity_profile.tolist() == [1.0] * 168
