"""Train/test protocol: stratified split, unlabeled masking, F1 on PSMs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import lapsvm
from .timedecay import FeatureVector, features_matrix

DEFAULT_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int


def f1_scores(y_true: Sequence[int], y_pred: Sequence[int]) -> Scores:
    """Precision, recall and F1 of the positive (+1, PSM) class.

    Any ratio with a zero denominator, F1 included, is 0.
    """
    t = np.asarray(y_true) > 0
    p = np.asarray(y_pred) > 0
    tp = int(np.sum(t & p))
    fp = int(np.sum(~t & p))
    fn = int(np.sum(t & ~p))
    tn = int(np.sum(~t & ~p))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Scores(precision, recall, f1, tp, fp, fn, tn)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def stratified_split(y: np.ndarray, test_frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Split indices per class; each class sends ``round(test_frac * n_c)`` to test."""
    if not 0.0 < test_frac < 1.0:
        raise ValueError(f"test fraction must lie in (0, 1), got {test_frac}")
    rng = _rng(seed)
    train, test = [], []
    for cls in (1, -1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(test_frac * len(idx)))
        test.append(idx[:k])
        train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def unlabeled_order(train_idx: np.ndarray, seed: int) -> np.ndarray:
    """Order in which training points lose their label; masks for growing
    fractions are nested prefixes of it."""
    return train_idx[_rng(seed + 1).permutation(len(train_idx))]


def mask_count(n_train: int, frac: float) -> int:
    if not 0.0 <= frac < 1.0:
        raise ValueError(f"unlabeled fraction must lie in [0, 1), got {frac}")
    return int(round(frac * n_train))


@dataclass(frozen=True)
class Dataset:
    users: list[str]
    X: np.ndarray
    y: np.ndarray

    @classmethod
    def from_features(cls, features: list[FeatureVector], labels: Mapping[str, int]) -> tuple["Dataset", np.ndarray]:
        """Labeled dataset plus the feature rows of users without a label."""
        users, X = features_matrix(features)
        has = np.array([u in labels for u in users], dtype=bool)
        y = np.array([labels[u] for u, h in zip(users, has) if h], dtype=np.float64)
        return cls([u for u, h in zip(users, has) if h], X[has], y), X[~has]


@dataclass(frozen=True)
class EvalResult:
    unlabeled_frac: float
    n_labeled: int
    n_unlabeled: int
    n_test: int
    scores: Scores


def train_masked(
    data: Dataset,
    train_idx: np.ndarray,
    n_masked: int,
    seed: int,
    extra_unlabeled: np.ndarray | None = None,
    **train_kw,
) -> lapsvm.LapSvmModel:
    order = unlabeled_order(train_idx, seed)
    masked, labeled = order[:n_masked], np.sort(order[n_masked:])
    unl = data.X[np.sort(masked)]
    if extra_unlabeled is not None and len(extra_unlabeled):
        unl = np.vstack([unl, extra_unlabeled])
    ts = lapsvm.TrainSet(data.X[labeled], data.y[labeled], unl)
    return lapsvm.train(ts, **train_kw)


def evaluate(
    data: Dataset,
    unlabeled_frac: float = 0.1,
    seed: int = 7,
    test_frac: float = 0.5,
    extra_unlabeled: np.ndarray | None = None,
    **train_kw,
) -> EvalResult:
    train_idx, test_idx = stratified_split(data.y, test_frac, seed)
    if len(test_idx) == 0:
        raise ValueError("empty test set")
    k = mask_count(len(train_idx), unlabeled_frac)
    model = train_masked(data, train_idx, k, seed, extra_unlabeled, **train_kw)
    pred = model.predict(data.X[test_idx])
    n_extra = 0 if extra_unlabeled is None else len(extra_unlabeled)
    return EvalResult(
        unlabeled_frac, len(train_idx) - k, k + n_extra, len(test_idx),
        f1_scores(data.y[test_idx], pred),
    )


def sweep(
    data: Dataset,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 7,
    test_frac: float = 0.5,
    extra_unlabeled: np.ndarray | None = None,
    **train_kw,
) -> list[EvalResult]:
    """:func:`evaluate` at each fraction with one split and nested masks."""
    return [evaluate(data, f, seed, test_frac, extra_unlabeled, **train_kw) for f in fractions]


def trend_slope(fractions: Sequence[float], values: Sequence[float]) -> float:
    return float(np.polyfit(np.asarray(fractions, float), np.asarray(values, float), 1)[0])
