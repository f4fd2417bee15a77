"""Synthetic bug-tracker logs with planted component and reputation structure.

Each developer gets a home component and a reputation. A bug belongs to one
component; its text is drawn mostly from that component's vocabulary. The
bug starts with a random assignee and is tossed toward reputable developers
of its component until someone from the component keeps it and fixes it.
Event times follow an hour-of-week intensity profile.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import DAY, HOUR, WEEK, Event, EventKind, EventLog, IngestError, assemble_log

# 2021-01-04 00:00 UTC, a Monday.
DEFAULT_START = 1609718400

COMMON_WORDS = (
    "error crash fails failure exception broken issue problem window dialog "
    "button click open close load save file view editor panel menu update"
).split()


def default_intensity() -> np.ndarray:
    """Workday peak 9-18h, evening shoulder, night and weekend trough."""
    profile = np.empty(168)
    for h in range(168):
        day, hour = divmod(h, 24)
        if 9 <= hour < 18:
            rate = 1.0
        elif 7 <= hour < 9 or 18 <= hour < 22:
            rate = 0.35
        else:
            rate = 0.05
        if day >= 5:
            rate *= 0.15
        profile[h] = rate
    return profile


@dataclass
class SyntheticConfig:
    n_devs: int = 30
    n_bugs: int = 500
    n_components: int = 3
    weeks: int = 8
    intensity_profile: np.ndarray = field(default_factory=default_intensity)
    words_per_component: int = 12
    tokens_per_bug: int = 20
    topical_share: float = 0.8
    same_component_boost: float = 10.0
    reputation_exponent: float = 1.0
    keep_probability: float = 0.85
    max_tosses: int = 5
    start: int = DEFAULT_START

    def validate(self) -> None:
        if self.n_devs < 3:
            raise IngestError("n_devs must be >= 3")
        if self.n_bugs < 1:
            raise IngestError("n_bugs must be >= 1")
        if self.n_components < 1:
            raise IngestError("n_components must be >= 1")
        if self.weeks < 1:
            raise IngestError("weeks must be >= 1")
        profile = np.asarray(self.intensity_profile, dtype=float)
        if profile.shape != (168,) or np.any(profile < 0) or not np.isfinite(profile).all():
            raise IngestError("intensity_profile must be 168 nonnegative floats")
        if profile.sum() <= 0:
            raise IngestError("intensity_profile must have positive mass")

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> SyntheticConfig:
        cfg = cls()
        for key in ("n_devs", "n_bugs", "n_components", "weeks"):
            if key in values:
                try:
                    setattr(cfg, key, int(values[key]))
                except ValueError as exc:
                    raise IngestError(f"{key} must be an integer") from exc
        prof = values.get("intensity_profile", "default").strip()
        if prof != "default":
            try:
                cfg.intensity_profile = np.array([float(v) for v in prof.split(",")])
            except ValueError as exc:
                raise IngestError("intensity_profile must be comma-separated floats") from exc
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> SyntheticConfig:
        parser = configparser.ConfigParser()
        parser.read_string("[synthetic]\n" + Path(path).read_text(encoding="utf-8"))
        return cls.from_mapping(dict(parser["synthetic"]))


def sample_times(rng: np.random.Generator, profile: np.ndarray, n: int, weeks: int, start: int) -> np.ndarray:
    p = profile / profile.sum()
    hour_of_week = rng.choice(168, size=n, p=p)
    week = rng.integers(0, weeks, size=n)
    offset = rng.integers(0, HOUR, size=n)
    return start + week * WEEK + hour_of_week * HOUR + offset


def generate_synthetic(cfg: SyntheticConfig, seed: int) -> EventLog:
    cfg.validate()
    rng = np.random.default_rng(seed)
    n_dev, n_comp = cfg.n_devs, cfg.n_components
    devs = [f"dev{k:03d}" for k in range(n_dev)]
    comps = [f"comp{c}" for c in range(n_comp)]

    home = rng.permutation(np.arange(n_dev) % n_comp)
    reputation = np.empty(n_dev)
    for c in range(n_comp):
        members = np.flatnonzero(home == c)
        ranks = rng.permutation(len(members))
        reputation[members] = 1.0 / (ranks + 1.0) ** cfg.reputation_exponent

    vocab = [[f"{comps[c]}w{k}" for k in range(cfg.words_per_component)] for c in range(n_comp)]
    profile = np.asarray(cfg.intensity_profile, dtype=float)

    events: list[Event] = []
    texts: dict[str, str] = {}
    components: dict[str, str] = {}
    for b in range(cfg.n_bugs):
        bug = f"bug{b:05d}"
        comp = int(rng.integers(n_comp))
        n_topical = rng.binomial(cfg.tokens_per_bug, cfg.topical_share)
        words = list(rng.choice(vocab[comp], size=n_topical))
        words += list(rng.choice(COMMON_WORDS, size=cfg.tokens_per_bug - n_topical))
        rng.shuffle(words)
        texts[bug] = " ".join(words)
        components[bug] = comps[comp]

        pref = reputation * np.where(home == comp, cfg.same_component_boost, 1.0)
        holder = int(rng.integers(n_dev))
        path = [holder]
        while len(path) <= cfg.max_tosses:
            if home[holder] == comp and rng.random() < cfg.keep_probability:
                break
            w = pref.copy()
            w[holder] = 0.0
            holder = int(rng.choice(n_dev, p=w / w.sum()))
            path.append(holder)
        if home[holder] != comp:
            w = np.where(home == comp, reputation, 0.0)
            w[holder] = 0.0
            holder = int(rng.choice(n_dev, p=w / w.sum()))
            path.append(holder)

        times = np.sort(sample_times(rng, profile, len(path) + 1, cfg.weeks, cfg.start))
        events.append(Event(bug, EventKind.REPORT, None, devs[path[0]], int(times[0])))
        for k in range(1, len(path)):
            events.append(Event(bug, EventKind.TOSS, devs[path[k - 1]], devs[path[k]], int(times[k])))
        events.append(Event(bug, EventKind.FIX, None, devs[path[-1]], int(times[-1])))
    return assemble_log(events, texts, components)


def hour_of_week(ts: np.ndarray, start: int = DEFAULT_START) -> np.ndarray:
    return ((np.asarray(ts) - start) % WEEK) // HOUR


def is_weekend(ts: np.ndarray, start: int = DEFAULT_START) -> np.ndarray:
    return ((np.asarray(ts) - start) % WEEK) // DAY >= 5
