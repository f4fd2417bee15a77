"""Run configuration: named profiles, key-value files, env and flag overrides.

Precedence, lowest first: profile defaults, config file, ``STDGNN_*``
environment variables, command-line flags. The resolved config is written
next to every output and can be fed back with ``--config``.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .evaluation import SplitPlan, TextSettings
from .grcnn import COMPONENTS, GrcnnConfig

ENV_PREFIX = "STDGNN_"
PROFILES = ("paper", "desk")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    events: str = "events.jsonl"
    workdir: str = "work"
    profile: str = "desk"
    seed: int = 1
    threads: int = 1
    task: str = "bfp"
    # synthetic logs
    n_devs: int = 30
    n_bugs: int = 500
    n_components: int = 3
    weeks: int = 8
    intensity_profile: str = "default"
    # preprocessing and snapshots
    min_fixes_per_year: int = 5
    window_len: int = 1
    # walks
    alpha: float = 0.7
    r: int = 4
    l: int = 12
    # model
    k1: int = 8
    k2: int = 8
    hidden: int = 16
    fc_sizes: tuple[int, ...] = (32, 32)
    dropout: float = 0.5
    lr: float = 0.01
    max_epoch: int = 100
    t_hour: int = 6
    t_day: int = 3
    t_week: int = 2
    encoding: str = ""
    embed_dim: int = 64
    attention: bool = True
    components: tuple[str, ...] = COMPONENTS
    batch_size: int = 32
    patience: int = 10
    standard_lstm: bool = False
    renormalize_loss: bool = False
    # text
    lda_topics: int = 10
    lda_iterations: int = 200
    lda_infer_iterations: int = 100
    # tasks and evaluation
    min_fixer_count: int = 5
    topk: tuple[int, ...] = (1, 3, 5)
    train_frac: float = 0.7
    val_frac: float = 0.1
    repeats: int = 10
    shuffle_labels: bool = False

    def grcnn(self, n_nodes: int) -> GrcnnConfig:
        from .grcnn import resolve_encoding

        return GrcnnConfig(
            k1=self.k1, k2=self.k2, hidden=self.hidden, fc_sizes=self.fc_sizes,
            dropout=self.dropout, lr=self.lr, max_epoch=self.max_epoch,
            t_hour=self.t_hour, t_day=self.t_day, t_week=self.t_week,
            encoding=resolve_encoding(n_nodes, self.encoding or None), embed_dim=self.embed_dim,
            attention=self.attention, components=self.components, batch_size=self.batch_size,
            patience=self.patience, standard_lstm=self.standard_lstm,
            renormalize_loss=self.renormalize_loss,
        )

    def plan(self) -> SplitPlan:
        return SplitPlan(self.train_frac, self.val_frac, self.repeats, self.seed)

    def text(self) -> TextSettings:
        return TextSettings(self.lda_topics, self.lda_iterations, self.lda_infer_iterations)

    def validate(self) -> RunConfig:
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {PROFILES}")
        if self.task not in ("dap", "bfp"):
            raise ConfigError("task must be dap or bfp")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.r < 1 or self.l < 3:
            raise ConfigError("r must be >= 1 and l >= 3 (two valid 1x3 convolutions need l*r >= 5)")
        if self.l * self.r < 5:
            raise ConfigError("l * r must be >= 5")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not self.topk or min(self.topk) < 1:
            raise ConfigError("topk must list positive integers")
        try:
            self.grcnn(1)
            self.plan()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def dump(self, path: str | Path) -> None:
        parser = configparser.ConfigParser()
        parser["run"] = {f.name: _format(getattr(self, f.name)) for f in fields(self)}
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            parser.write(fh)


PROFILE_VALUES: dict[str, dict[str, Any]] = {
    "paper": dict(
        alpha=0.7, r=35, l=90, k1=64, k2=64, hidden=256, fc_sizes=(2048, 2048),
        lda_topics=200, lda_iterations=500, t_hour=24, t_day=7, t_week=4,
    ),
    "desk": dict(
        alpha=0.7, r=4, l=12, k1=8, k2=8, hidden=16, fc_sizes=(32, 32),
        lda_topics=10, lda_iterations=200, t_hour=6, t_day=3, t_week=2,
    ),
}


def _format(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, raw: Any) -> Any:
    field = {f.name: f for f in fields(RunConfig)}.get(name)
    if field is None:
        raise ConfigError(f"unknown config key {name!r}")
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(raw, list) else raw
    text = raw.strip()
    kind = field.type
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if kind == "tuple[int, ...]":
            return tuple(int(v) for v in text.split(",") if v.strip())
        if kind == "tuple[str, ...]":
            return tuple(v.strip() for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return text


def read_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    text = path.read_text(encoding="utf-8")
    parser = configparser.ConfigParser()
    if not text.lstrip().startswith("["):
        text = "[run]\n" + text
    parser.read_string(text)
    out: dict[str, str] = {}
    for section in parser.sections():
        out.update(parser[section])
    return out


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    names = {f.name for f in fields(RunConfig)}
    out = {}
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in names:
                out[name] = value
    return out


def resolve(
    config_path: str | Path | None = None,
    flags: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    file_values = read_config_file(config_path) if config_path else {}
    env_values = env_overrides(environ)
    flag_values = {k: v for k, v in (flags or {}).items() if v is not None}
    layered = {**file_values, **env_values, **flag_values}
    profile = str(layered.get("profile", RunConfig.profile))
    if profile not in PROFILES:
        raise ConfigError(f"profile must be one of {PROFILES}")
    values: dict[str, Any] = dict(PROFILE_VALUES[profile])
    values.update({k: _coerce(k, v) for k, v in layered.items()})
    values["profile"] = profile
    return dataclasses.replace(RunConfig(), **values).validate()
