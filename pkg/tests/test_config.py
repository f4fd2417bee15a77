from __future__ import annotations

import pytest

from stdgnn.config import ConfigError, RunConfig, env_overrides, read_config_file, resolve


def test_profiles():
    desk = resolve(None, {}, {})
    assert (desk.profile, desk.l, desk.r, desk.k1, desk.hidden, desk.fc_sizes) == ("desk", 12, 4, 8, 16, (32, 32))
    assert (desk.t_hour, desk.t_day, desk.t_week, desk.lda_topics) == (6, 3, 2, 10)
    paper = resolve(None, {"profile": "paper"}, {})
    assert (paper.l, paper.r, paper.alpha, paper.k1, paper.k2, paper.hidden) == (90, 35, 0.7, 64, 64, 256)
    assert paper.fc_sizes == (2048, 2048) and paper.lda_topics == 200 and paper.lda_iterations == 500


def test_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("alpha = 0.2\nr = 6\nl = 9\nseed = 3\n")
    assert resolve(path, {}, {}).alpha == 0.2
    env = {"STDGNN_ALPHA": "0.4", "STDGNN_R": "5", "UNRELATED": "x"}
    cfg = resolve(path, {"alpha": "0.9"}, env)
    assert (cfg.alpha, cfg.r, cfg.l, cfg.seed) == (0.9, 5, 9, 3)
    assert env_overrides(env) == {"alpha": "0.4", "r": "5"}


def test_profile_in_file_is_overridden_by_explicit_keys(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("[run]\nprofile = paper\nhidden = 32\n")
    cfg = resolve(path, {}, {})
    assert cfg.profile == "paper" and cfg.hidden == 32 and cfg.l == 90


def test_dump_round_trip(tmp_path):
    cfg = resolve(None, {"task": "dap", "components": "hour,week", "attention": "false", "topk": "1,2"}, {})
    cfg.dump(tmp_path / "resolved.ini")
    again = resolve(tmp_path / "resolved.ini", {}, {})
    assert again == cfg
    assert again.components == ("hour", "week") and again.attention is False and again.topk == (1, 2)
    assert "[run]" in (tmp_path / "resolved.ini").read_text()
    assert read_config_file(tmp_path / "resolved.ini")["task"] == "dap"


@pytest.mark.parametrize("flags", [
    {"alpha": "1.5"}, {"profile": "laptop"}, {"task": "xyz"}, {"bogus_key": "1"}, {"r": "two"},
    {"components": "month"}, {"attention": "maybe"}, {"l": "2", "r": "1"}, {"topk": "0"}, {"train_frac": "0.95"},
])
def test_invalid_values(flags):
    with pytest.raises(ConfigError):
        resolve(None, flags, {})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        resolve(tmp_path / "nope.cfg", {}, {})


def test_grcnn_and_plan_views():
    cfg = RunConfig()
    assert cfg.grcnn(10).encoding == "onehot" and cfg.grcnn(5000).encoding == "index"
    assert cfg.plan().repeats == cfg.repeats and cfg.text().n_topics == cfg.lda_topics
