"""Synthetic retweet cascades with planted pathogenic (PSM) users.

Randomness comes from numpy's Philox counter-based generator seeded with
``SynthConfig.seed``, so a config always yields the same corpus.

Viral cascades fill their first ``ceil(early_fraction * size)`` positions by
weighted sampling without replacement, where a PSM user weighs
``early_bias`` and a normal user 1; the remaining positions and all
positions of normal cascades are drawn uniformly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO

import numpy as np

from .action_log import ActionRecord, FormatError

PSM = "psm"
NORMAL = "normal"


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    n_users: int = 1000
    psm_fraction: float = 0.24
    n_messages: int = 2000
    viral_fraction: float = 0.19
    viral_size_range: tuple[int, int] = (50, 150)
    normal_size_range: tuple[int, int] = (5, 40)
    horizon: int = 86400
    early_bias: float = 6.0
    early_fraction: float = 0.5

    def __post_init__(self):
        for name in ("n_users", "n_messages", "horizon"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("psm_fraction", "viral_fraction", "early_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        for name in ("viral_size_range", "normal_size_range"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 1 <= min <= max, got {(lo, hi)}")
            if hi > self.n_users:
                raise ValueError(f"{name} max {hi} exceeds n_users {self.n_users}")
        if self.early_bias < 1:
            raise ValueError(f"early_bias must be >= 1, got {self.early_bias}")

    @property
    def n_psm(self) -> int:
        # guard against 0.07 * 100 = 7.000000000000001
        return math.ceil(round(self.n_users * self.psm_fraction, 9))

    @property
    def n_viral(self) -> int:
        return int(round(self.n_messages * self.viral_fraction))

    @property
    def viral_threshold(self) -> int:
        """Smallest theta separating viral from normal cascades, when the
        size ranges do not overlap."""
        return max(self.viral_size_range[0], self.normal_size_range[1] + 1)


def _weighted_order(rng: np.random.Generator, weights: np.ndarray, k: int) -> np.ndarray:
    # Efraimidis-Spirakis: keys u^(1/w), largest first
    keys = np.log(rng.random(len(weights))) / weights
    return np.argsort(-keys, kind="stable")[:k]


def generate(cfg: SynthConfig) -> tuple[list[ActionRecord], dict[str, str]]:
    """Return ``(records, truth)`` with ``truth[user]`` in {"psm", "normal"}."""
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    n = cfg.n_users
    users = [f"u{k}" for k in range(n)]
    is_psm = np.zeros(n, dtype=bool)
    is_psm[rng.permutation(n)[: cfg.n_psm]] = True
    viral = np.zeros(cfg.n_messages, dtype=bool)
    viral[rng.permutation(cfg.n_messages)[: cfg.n_viral]] = True
    weights = np.where(is_psm, float(cfg.early_bias), 1.0)

    cascades: list[np.ndarray] = []
    for m in range(cfg.n_messages):
        if viral[m]:
            lo, hi = cfg.viral_size_range
            size = int(rng.integers(lo, hi + 1))
            k = math.ceil(cfg.early_fraction * size)
            early = _weighted_order(rng, weights, k)
            rest_pool = np.setdiff1d(np.arange(n), early)
            rest = rng.choice(rest_pool, size - k, replace=False)
            cascades.append(np.concatenate([early, rest]))
        else:
            lo, hi = cfg.normal_size_range
            size = int(rng.integers(lo, hi + 1))
            cascades.append(rng.choice(n, size, replace=False))

    _cover_all_users(rng, cascades, viral, n)

    records = []
    for m, parts in enumerate(cascades):
        times = np.sort(rng.integers(0, cfg.horizon, len(parts)))
        msg = f"m{m}"
        records.extend(ActionRecord(users[u], msg, int(t)) for u, t in zip(parts, times))
    truth = {users[k]: PSM if is_psm[k] else NORMAL for k in range(n)}
    return records, truth


def _cover_all_users(rng, cascades, viral, n):
    """Swap unseen users into normal cascades in place of users that appear
    more than once, keeping every cascade size unchanged."""
    counts = np.bincount(np.concatenate(cascades), minlength=n)
    missing = np.flatnonzero(counts == 0)
    normal_ids = np.flatnonzero(~viral)
    if len(normal_ids) == 0:
        normal_ids = np.arange(len(cascades))
    for u in missing:
        for _ in range(100):
            c = int(rng.choice(normal_ids))
            pos = int(rng.integers(len(cascades[c])))
            old = cascades[c][pos]
            if counts[old] > 1:
                cascades[c][pos] = u
                counts[old] -= 1
                counts[u] += 1
                break
        else:
            c = int(rng.choice(normal_ids))
            cascades[c] = np.append(cascades[c], u)
            counts[u] += 1


def write_truth(truth: dict[str, str], sink: IO[str]) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(("user", "label"))
    for u in sorted(truth):
        writer.writerow((u, truth[u]))


def read_truth(source: IO[str]) -> dict[str, str]:
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != ("user", "label"):
        raise FormatError("truth file must have header 'user,label'")
    out = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2 or row[1].strip() not in (PSM, NORMAL):
            raise FormatError(f"line {lineno}: expected 'user,psm|normal'")
        out[row[0].strip()] = row[1].strip()
    return out
