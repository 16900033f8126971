"""Prima-facie causality scores over one time interval.

A *view* is any :class:`~psmdetect.action_log.CorpusIndex`; restrict the
full index with ``index.restrict(start, end)`` to score an interval.

Every ratio with an empty denominator evaluates to 0, and every mean over
an empty set is 0. Sums run in ascending user-id order, so the bulk
profiler and the single-user functions produce bit-identical values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Mapping

import numpy as np

from . import _kernels
from .action_log import CascadeArrays, CorpusIndex

DEFAULT_ALPHA = 1e-9


class EmptyCorpusError(ValueError):
    """Raised when a probability is requested over a view without cascades."""


@dataclass(frozen=True)
class PairStats:
    i: str
    j: str
    p_ij: float
    p_not_ij: float
    den_ij: int
    den_not_ij: int


@dataclass(frozen=True)
class CausalityProfile:
    user: str
    e_km: float
    e_rel: float
    e_nb: float
    e_wnb: float
    related_count: int

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.e_km, self.e_rel, self.e_nb, self.e_wnb)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def relative_strength(p_ij: float, p_not_ij: float, alpha: float = DEFAULT_ALPHA) -> float:
    """Relative-likelihood lift of ``p_ij`` over ``p_not_ij``.

    ``alpha`` guards both divisions; the second branch with ``p_ij == 0``
    evaluates to ``1 - p_not_ij / alpha``.
    """
    if p_ij > p_not_ij:
        return p_ij / (p_not_ij + alpha) - 1.0
    if p_ij == 0.0:
        return 1.0 - p_not_ij / alpha
    return 1.0 - p_not_ij / p_ij


# -- single-query API ---------------------------------------------------------

def prior_viral_probability(view: CorpusIndex) -> float:
    if not view.cascades:
        raise EmptyCorpusError("empty corpus")
    return len(view.viral_set) / len(view.cascades)


def user_viral_probability(view: CorpusIndex, i: str) -> float:
    key = viral = 0
    for m in view.cascades:
        if view.is_key_user(i, m):
            key += 1
            viral += m in view.viral_set
    return _ratio(viral, key)


def pair_probabilities(view: CorpusIndex, i: str, j: str) -> PairStats:
    if i == j:
        raise ValueError("pair probabilities need two distinct users")
    before = before_viral = j_count = j_viral = 0
    for m, c in view.cascades.items():
        tj = c.time_of(j)
        if tj is None:
            continue
        is_viral = m in view.viral_set
        j_count += 1
        j_viral += is_viral
        ti = c.time_of(i)
        if ti is not None and ti < tj:
            before += 1
            before_viral += is_viral
    den_not = j_count - before
    return PairStats(
        i, j,
        _ratio(before_viral, before),
        _ratio(j_viral - before_viral, den_not),
        before, den_not,
    )


def prima_facie_users(view: CorpusIndex) -> set[str]:
    """Users whose viral probability as key user exceeds the prior."""
    if not view.cascades:
        return set()
    rho = prior_viral_probability(view)
    return {u for u in view.users if user_viral_probability(view, u) > rho}


def related_users(view: CorpusIndex, i: str, prima_facie: set[str] | None = None) -> set[str]:
    pf = prima_facie_users(view) if prima_facie is None else prima_facie
    if i not in pf:
        return set()
    out = set()
    for m in view.viral_set:
        c = view.cascades[m]
        ti = c.time_of(i)
        if ti is None or not view.is_key_user(i, m):
            continue
        for j, tj in c.actions:
            if tj > ti and j in pf and view.is_key_user(j, m):
                out.add(j)
    return out


def score_km(view: CorpusIndex, i: str) -> float:
    rel = sorted(related_users(view, i))
    if not rel:
        return 0.0
    total = 0.0
    for j in rel:
        s = pair_probabilities(view, i, j)
        total += s.p_ij - s.p_not_ij
    return total / len(rel)


def score_rel(view: CorpusIndex, i: str, alpha: float = DEFAULT_ALPHA) -> float:
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    rel = sorted(related_users(view, i))
    if not rel:
        return 0.0
    total = 0.0
    for j in rel:
        s = pair_probabilities(view, i, j)
        total += relative_strength(s.p_ij, s.p_not_ij, alpha)
    return total / len(rel)


def _influencers(view: CorpusIndex, j: str) -> list[str]:
    pf = prima_facie_users(view)
    return sorted(i for i in pf if i != j and j in related_users(view, i, pf))


def score_nb(view: CorpusIndex, j: str, km_scores: Mapping[str, float]) -> float:
    q = _influencers(view, j)
    if not q:
        return 0.0
    total = 0.0
    for i in q:
        if i not in km_scores:
            raise KeyError(f"no K&M score for influencer {i!r} of {j!r}")
        total += km_scores[i]
    return total / len(q)


def score_wnb(
    view: CorpusIndex,
    j: str,
    km_scores: Mapping[str, float],
    weights: Mapping[str, float],
) -> float:
    """Weighted mean of the K&M scores of ``j``'s influencers.

    Weights are divided by their maximum first, so equal weights reproduce
    :func:`score_nb` bit for bit.
    """
    q = _influencers(view, j)
    ws = []
    for i in q:
        if i not in km_scores:
            raise KeyError(f"no K&M score for influencer {i!r} of {j!r}")
        w = float(weights[i])
        if w < 0:
            raise ValueError(f"negative weight {w} for {i!r}")
        ws.append(w)
    return _weighted_mean([km_scores[i] for i in q], ws)


def _weighted_mean(values: list[float], weights: list[float]) -> float:
    top = max(weights, default=0.0)
    if not top > 0:
        return 0.0
    num = den = 0.0
    for v, w in zip(values, weights):
        r = w / top
        num += r * v
        den += r
    return num / den


# -- bulk profiler --------------------------------------------------------------

@dataclass
class ViewStats:
    """All intermediate quantities of one view in array form.

    ``pairs`` holds the sorted codes ``i * n_users + j`` of every related
    pair; ``p_ij``/``p_not_ij`` and the denominators align with it.
    """

    arrays: CascadeArrays
    rho: float
    rho_user: np.ndarray
    prima_facie: np.ndarray
    pairs: np.ndarray
    p_ij: np.ndarray
    p_not_ij: np.ndarray
    den_ij: np.ndarray
    den_not_ij: np.ndarray

    def pair_stats(self) -> list[PairStats]:
        users = self.arrays.users
        n = self.arrays.n_users
        return [
            PairStats(users[c // n], users[c % n], float(a), float(b), int(d), int(e))
            for c, a, b, d, e in zip(self.pairs, self.p_ij, self.p_not_ij, self.den_ij, self.den_not_ij)
        ]


def _related_pair_codes(arr: CascadeArrays, pf_pos: np.ndarray) -> np.ndarray:
    n = arr.n_users
    parts = []
    for c in np.flatnonzero(arr.viral):
        sl = slice(arr.offsets[c], arr.offsets[c + 1])
        sel = pf_pos[sl]
        if sel.sum() < 2:
            continue
        u = arr.uid[sl][sel]
        t = arr.times[sl][sel]
        parts.append((u[:, None] * n + u[None, :])[t[:, None] < t[None, :]])
    if not parts:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(parts))


def view_stats(view: CorpusIndex | CascadeArrays) -> ViewStats:
    arr = view if isinstance(view, CascadeArrays) else CascadeArrays.from_index(view)
    n_msg = len(arr.messages)
    if n_msg == 0:
        raise EmptyCorpusError("empty corpus")
    n = arr.n_users
    rho = int(arr.viral.sum()) / n_msg
    viral_act = np.repeat(arr.viral, np.diff(arr.offsets))
    key_n = np.bincount(arr.uid[arr.key], minlength=n)
    key_v = np.bincount(arr.uid[arr.key & viral_act], minlength=n)
    rho_user = np.array([_ratio(int(v), int(k)) for v, k in zip(key_v, key_n)])
    pf = rho_user > rho
    pf_pos = arr.key & viral_act & pf[arr.uid]
    pairs = _related_pair_codes(arr, pf_pos)

    tracked = np.zeros(n, dtype=bool)
    tracked[pairs // n] = True
    tracked[pairs % n] = True
    before, before_v = _kernels.pair_counts(
        arr.offsets, arr.uid, arr.times, arr.viral, tracked, pairs, n
    )
    j = pairs % n
    occ = np.bincount(arr.uid, minlength=n)
    occ_v = np.bincount(arr.uid[viral_act], minlength=n)
    den_not = occ[j] - before
    num_not = occ_v[j] - before_v
    p_ij = np.array([_ratio(int(a), int(b)) for a, b in zip(before_v, before)])
    p_not = np.array([_ratio(int(a), int(b)) for a, b in zip(num_not, den_not)])
    return ViewStats(arr, rho, rho_user, pf, pairs, p_ij, p_not, before, den_not)


def _default_weights(related_count: Mapping[str, int]) -> dict[str, float]:
    return {u: float(k) for u, k in related_count.items()}


def profile_users(
    view: CorpusIndex,
    alpha: float = DEFAULT_ALPHA,
    weights: Mapping[str, float] | None = None,
) -> dict[str, CausalityProfile]:
    """Score every user of ``view`` with all four metrics.

    ``weights`` defaults to ``|R(i)|`` for the weighted neighbourhood score.
    A view without cascades yields an empty mapping.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not view.cascades:
        return {}
    st = view_stats(view)
    arr = st.arrays
    n = arr.n_users
    users = arr.users
    owner = st.pairs // n
    other = st.pairs % n
    # pairs are sorted by owner then by partner, i.e. ascending user id
    bounds = np.searchsorted(owner, np.arange(n + 1))

    km = [0.0] * n
    rel = [0.0] * n
    rcount = np.diff(bounds)
    p_ij = st.p_ij.tolist()
    p_not = st.p_not_ij.tolist()
    for i in np.flatnonzero(rcount):
        lo, hi = bounds[i], bounds[i + 1]
        t_km = 0.0
        t_rel = 0.0
        for k in range(lo, hi):
            t_km += p_ij[k] - p_not[k]
            t_rel += relative_strength(p_ij[k], p_not[k], alpha)
        km[i] = t_km / int(hi - lo)
        rel[i] = t_rel / int(hi - lo)

    if weights is None:
        w = [float(c) for c in rcount]
    else:
        w = [None if weights.get(u) is None else float(weights[u]) for u in users]
        if any(x is not None and x < 0 for x in w):
            raise ValueError("weights must be non-negative")

    # influencers of j, ascending
    by_other = np.lexsort((owner, other))
    inf_sorted = owner[by_other].tolist()
    ob = np.searchsorted(other[by_other], np.arange(n + 1))
    nb = [0.0] * n
    wnb = [0.0] * n
    for j in range(n):
        lo, hi = ob[j], ob[j + 1]
        if lo == hi:
            continue
        t = 0.0
        q = inf_sorted[lo:hi]
        for i in q:
            if w[i] is None:
                raise KeyError(f"no weight for influencer {users[i]!r}")
            t += km[i]
        nb[j] = t / int(hi - lo)
        wnb[j] = _weighted_mean([km[i] for i in q], [w[i] for i in q])

    return {
        u: CausalityProfile(u, km[k], rel[k], nb[k], wnb[k], int(rcount[k]))
        for k, u in enumerate(users)
    }


def write_pair_stats(stats: list[PairStats], sink: IO[str]) -> None:
    """Debug dump ``i,j,p_ij,p_not_ij,den_ij,den_not_ij``."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(("i", "j", "p_ij", "p_not_ij", "den_ij", "den_not_ij"))
    for s in stats:
        writer.writerow((s.i, s.j, repr(s.p_ij), repr(s.p_not_ij), s.den_ij, s.den_not_ij))
