"""Sliding-window, exponentially decayed causality features.

Each user gets a 4-vector ``(xi_km, xi_rel, xi_nb, xi_wnb)``: the average
over windows ``[t' - delta, t']`` of the window's causality score weighted
by ``exp(-sigma * (t - t'))``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Iterable, Mapping

import numpy as np

from .action_log import CorpusIndex, FormatError
from .causal_metrics import DEFAULT_ALPHA, profile_users

DAY = 86400
FEATURE_NAMES = ("xi_km", "xi_rel", "xi_nb", "xi_wnb")


@dataclass(frozen=True)
class DecayConfig:
    t0: int
    t: int
    delta: int = DAY
    sigma: float = 1.0 / DAY

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError(f"window length must be positive, got {self.delta}")
        if self.sigma < 0:
            raise ValueError(f"decay rate must be non-negative, got {self.sigma}")
        if self.t0 + self.delta > self.t:
            raise ValueError(
                f"no complete window: t0 + delta = {self.t0 + self.delta} > t = {self.t}"
            )

    @classmethod
    def covering(cls, start: int, stop: int, delta: int = DAY, sigma: float | None = None) -> "DecayConfig":
        """Smallest config whose windows cover ``[start, stop]``.

        Windows end at most at ``t - delta``, so ``t`` is placed one window
        past the last window end.
        """
        n_windows = max(1, math.ceil((stop - start) / delta))
        return cls(start, start + (n_windows + 1) * delta, delta, 1.0 / delta if sigma is None else sigma)


@dataclass(frozen=True)
class FeatureVector:
    user: str
    xi: tuple[float, float, float, float]

    def __post_init__(self):
        if len(self.xi) != 4 or not all(math.isfinite(v) for v in self.xi):
            raise ValueError(f"feature vector for {self.user!r} must be 4 finite values: {self.xi}")


def window_sequence(cfg: DecayConfig) -> list[tuple[int, tuple[int, int]]]:
    """Window ends ``t' = t0 + j*delta`` for ``j >= 1`` with ``t' <= t - delta``."""
    out = []
    j = 1
    while cfg.t0 + j * cfg.delta <= cfg.t - cfg.delta:
        end = cfg.t0 + j * cfg.delta
        out.append((end, (end - cfg.delta, end)))
        j += 1
    return out


def decay_weights(cfg: DecayConfig) -> list[float]:
    return [math.exp(-cfg.sigma * (cfg.t - end)) for end, _ in window_sequence(cfg)]


def window_scores(
    index: CorpusIndex,
    cfg: DecayConfig,
    alpha: float = DEFAULT_ALPHA,
    weights: Mapping[str, float] | None = None,
) -> list[dict[str, tuple[float, float, float, float]]]:
    """Per-window causality scores; a window without cascades is empty."""
    out = []
    for _, (lo, hi) in window_sequence(cfg):
        view = index.restrict(lo, hi)
        prof = profile_users(view, alpha=alpha, weights=weights)
        out.append({u: p.as_tuple() for u, p in prof.items()})
    return out


def extract_features(
    index: CorpusIndex,
    cfg: DecayConfig,
    users: Iterable[str] | None = None,
    alpha: float = DEFAULT_ALPHA,
    weights: Mapping[str, float] | None = None,
) -> list[FeatureVector]:
    """Time-decayed causality features for ``users`` (default: all users),
    returned in ascending user order.
    """
    windows = window_sequence(cfg)
    if not windows:
        raise ValueError("decay config produces no windows")
    users = sorted(index.users if users is None else set(users))
    acc = {u: [0.0, 0.0, 0.0, 0.0] for u in users}
    zero = (0.0, 0.0, 0.0, 0.0)
    for (end, _), scores in zip(windows, window_scores(index, cfg, alpha, weights)):
        w = math.exp(-cfg.sigma * (cfg.t - end))
        for u in users:
            s = scores.get(u, zero)
            a = acc[u]
            for k in range(4):
                a[k] += w * s[k]
    n = len(windows)
    return [FeatureVector(u, tuple(v / n for v in acc[u])) for u in users]


def features_matrix(features: list[FeatureVector]) -> tuple[list[str], np.ndarray]:
    users = [f.user for f in features]
    X = np.array([f.xi for f in features], dtype=np.float64).reshape(len(features), 4)
    return users, X


def write_features(features: Iterable[FeatureVector], sink: IO[str]) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(("user",) + FEATURE_NAMES)
    for f in features:
        writer.writerow((f.user,) + tuple(format(v, ".17g") for v in f.xi))


def read_features(source: IO[str]) -> list[FeatureVector]:
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("empty feature file") from None
    if tuple(h.strip() for h in header) != ("user",) + FEATURE_NAMES:
        raise FormatError(f"unexpected feature header {','.join(header)!r}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 5:
            raise FormatError(f"line {lineno}: expected 5 fields, got {len(row)}")
        try:
            xi = tuple(float(v) for v in row[1:])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        out.append(FeatureVector(row[0], xi))
    return out
