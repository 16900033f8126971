"""Laplacian SVM with manifold regularization, trained through its dual.

The decision function is ``f(x) = sum_i alpha_i k(x, x_i) + b`` over all
labeled and unlabeled training points. Training:

1. build the similarity matrix ``F`` and Laplacian ``L = D - F``;
2. build the Gram matrix ``K`` over every point;
3. solve the box- and equality-constrained dual for ``beta`` with
   ``Q = Y J K (I + C_r L K)^-1 J' Y``;
4. recover ``alpha`` from ``(I + C_r L K) alpha = J' Y beta`` and the bias
   from the margin conditions.

With ``C_r = 0`` the problem is exactly the soft-margin SVM dual.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np
import scipy.linalg

from . import _kernels

FORMAT_TAG = "lapsvm-v1"
MAX_CONDITION = 1e14


class IllConditionedError(ArithmeticError):
    pass


class QpConvergenceError(ArithmeticError):
    """SMO hit its iteration cap; carries the last iterate and its KKT gap."""

    def __init__(self, beta: np.ndarray, residual: float, n_iter: int):
        super().__init__(
            f"QP solver did not converge after {n_iter} updates (KKT gap {residual:.3e})"
        )
        self.beta = beta
        self.residual = residual
        self.n_iter = n_iter


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "linear"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "gaussian"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "gaussian" and not self.gamma > 0:
            raise ValueError(f"gaussian kernel needs gamma > 0, got {self.gamma}")

    def __call__(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        A = np.atleast_2d(A)
        B = np.atleast_2d(B)
        if self.kind == "linear":
            return A @ B.T
        return np.exp(-self.gamma * _sq_dists(A, B))


@dataclass(frozen=True)
class GraphSpec:
    weighting: str = "heat-kernel"
    bandwidth: float | None = None
    knn: int | None = 10

    def __post_init__(self):
        if self.weighting not in ("heat-kernel", "raw-distance"):
            raise ValueError(f"unknown graph weighting {self.weighting!r}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.knn is not None and self.knn < 1:
            raise ValueError(f"knn must be >= 1, got {self.knn}")


@dataclass
class TrainSet:
    """``l`` labeled rows (labels in {+1, -1}) followed by ``u`` unlabeled rows."""

    labeled: np.ndarray
    labels: np.ndarray
    unlabeled: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    def __post_init__(self):
        self.labeled = np.atleast_2d(np.asarray(self.labeled, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.float64).ravel()
        u = np.asarray(self.unlabeled, dtype=np.float64)
        self.unlabeled = u.reshape(-1, self.labeled.shape[1]) if u.size else np.empty((0, self.labeled.shape[1]))
        if len(self.labels) != len(self.labeled):
            raise ValueError("labels and labeled points differ in length")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be +1 or -1")
        if len(self.labels) < 2 or len(np.unique(self.labels)) < 2:
            raise ValueError("need at least two labeled points covering both classes")

    @property
    def l(self) -> int:
        return len(self.labels)

    @property
    def u(self) -> int:
        return len(self.unlabeled)

    @property
    def points(self) -> np.ndarray:
        return np.vstack([self.labeled, self.unlabeled])


@dataclass(frozen=True)
class QpProblem:
    Q: np.ndarray
    y: np.ndarray
    c_l: float

    def objective(self, beta: np.ndarray) -> float:
        """Dual objective ``-0.5 b'Qb + sum(b)`` (to be maximised)."""
        return -0.5 * float(beta @ self.Q @ beta) + float(np.sum(beta))

    def kkt_gap(self, beta: np.ndarray) -> float:
        """``max_{I_up} -y G - min_{I_low} -y G`` for ``G = Qb - 1``; 0 at optimum."""
        grad = self.Q @ beta - 1.0
        return _kkt_gap(grad, beta, self.y, self.c_l)


def _kkt_gap(grad, beta, y, C):
    score = -y * grad
    pos = y > 0
    in_up = np.where(pos, beta < C, beta > 0)
    in_low = np.where(pos, beta > 0, beta < C)
    if not in_up.any() or not in_low.any():
        return 0.0
    return max(float(score[in_up].max() - score[in_low].min()), 0.0)


@dataclass(frozen=True)
class SmoResult:
    beta: np.ndarray
    n_iter: int
    gap: float
    history: list[float] | None


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def _pairwise_dists(X: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt((diff * diff).sum(-1))


def median_bandwidth(X: np.ndarray) -> float:
    """Median distance over distinct point pairs; 1.0 if all points coincide."""
    d = _pairwise_dists(X)[np.triu_indices(len(X), 1)]
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


def build_graph(points: np.ndarray, spec: GraphSpec = GraphSpec()) -> np.ndarray:
    """Graph Laplacian ``L = D - F`` over ``points``."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("need at least two points to build a graph")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature values")
    dist = _pairwise_dists(X)
    if spec.weighting == "heat-kernel":
        bw = spec.bandwidth if spec.bandwidth is not None else median_bandwidth(X)
        F = np.exp(-(dist * dist) / (2.0 * bw * bw))
    else:
        F = dist.copy()
    np.fill_diagonal(F, 0.0)
    n = len(X)
    if spec.knn is not None and spec.knn < n - 1:
        d = dist.copy()
        np.fill_diagonal(d, np.inf)
        nn = np.argsort(d, axis=1, kind="stable")[:, : spec.knn]
        mask = np.zeros((n, n), dtype=bool)
        mask[np.repeat(np.arange(n), spec.knn), nn.ravel()] = True
        F = np.where(mask | mask.T, F, 0.0)
    return np.diag(F.sum(1)) - F


class _ManifoldSystem:
    """LU factorization of ``M = I + C_r L K``."""

    def __init__(self, K: np.ndarray, L: np.ndarray, c_r: float):
        n = len(K)
        if c_r == 0:
            self.lu = None
            return
        M = np.eye(n) + c_r * (L @ K)
        cond = np.linalg.cond(M)
        if not cond <= MAX_CONDITION:
            raise IllConditionedError(
                f"ill-conditioned system (condition {cond:.3e}); reduce C_r or add jitter"
            )
        self.lu = scipy.linalg.lu_factor(M, check_finite=False)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.lu is None:
            return np.array(rhs, dtype=np.float64)
        return scipy.linalg.lu_solve(self.lu, rhs, check_finite=False)


def _expand(train: TrainSet, vec: np.ndarray) -> np.ndarray:
    # J' Y v: labeled coordinates y_i v_i, unlabeled 0
    out = np.zeros((train.l + train.u,) + vec.shape[1:])
    out[: train.l] = train.labels.reshape((-1,) + (1,) * (vec.ndim - 1)) * vec
    return out


def _assemble(train, K, system, c_l):
    l = train.l
    Z = system.solve(_expand(train, np.eye(l)))
    Q = train.labels[:, None] * (K[:l] @ Z)
    asym = np.abs(Q - Q.T).max()
    scale = max(np.abs(Q).max(), 1.0)
    if asym > 1e-10 * scale:
        warnings.warn(f"dual matrix asymmetry {asym:.3e} before symmetrization", RuntimeWarning)
    Q = 0.5 * (Q + Q.T)
    if l > 0:
        lam = np.linalg.eigvalsh(Q)[0]
        if lam < -1e-8:
            warnings.warn(f"dual matrix min eigenvalue {lam:.3e}; adding 1e-8 jitter", RuntimeWarning)
            Q = Q + 1e-8 * np.eye(l)
    return QpProblem(Q, train.labels.copy(), float(c_l))


def assemble_qp(train: TrainSet, kernel: KernelSpec, L: np.ndarray, c_l: float, c_r: float) -> QpProblem:
    if not c_l > 0:
        raise ValueError(f"C_l must be positive, got {c_l}")
    if c_r < 0:
        raise ValueError(f"C_r must be non-negative, got {c_r}")
    X = train.points
    K = kernel(X, X)
    return _assemble(train, K, _ManifoldSystem(K, L, c_r), c_l)


def run_smo(qp: QpProblem, tol: float = 1e-6, max_iter: int = 10**6, record: bool = False) -> SmoResult:
    """Raw SMO run, no polishing. Raises :class:`QpConvergenceError` on the
    iteration cap.

    With ``record`` the result carries the dual objective after every update.
    """
    beta, _, n_iter, gap, converged, history = _kernels.smo_solve(
        qp.Q, qp.y, qp.c_l, tol, max_iter, None, record
    )
    if not converged:
        raise QpConvergenceError(beta, gap, n_iter)
    if history is not None:
        history = [-v for v in history]
    return SmoResult(beta, n_iter, gap, history)


def _polish(qp: QpProblem, beta: np.ndarray) -> np.ndarray:
    """Re-solve the free coordinates of ``beta`` exactly, keeping the bound
    ones fixed. Returns ``beta`` unchanged unless the result is feasible and
    at least as good."""
    C = qp.c_l
    eps = 1e-8 * C
    free = (beta > eps) & (beta < C - eps)
    if not free.any():
        return beta
    fixed = ~free
    b = np.where(beta >= C - eps, C, 0.0) * fixed
    F = np.flatnonzero(free)
    y = qp.y
    Qff = qp.Q[np.ix_(F, F)]
    rhs = 1.0 - qp.Q[F] @ b
    A = np.zeros((len(F) + 1, len(F) + 1))
    A[:-1, :-1] = Qff
    A[:-1, -1] = y[F]
    A[-1, :-1] = y[F]
    r = np.append(rhs, -float(y[fixed] @ b[fixed]))
    sol, *_ = np.linalg.lstsq(A, r, rcond=None)
    if not np.allclose(A @ sol, r, atol=1e-10, rtol=1e-10):
        return beta
    cand = b.copy()
    cand[F] = sol[:-1]
    if cand.min() < -1e-12 or cand.max() > C + 1e-12:
        return beta
    cand = np.clip(cand, 0.0, C)
    # the clip can move y'b by at most l * 1e-12
    if abs(float(y @ cand)) > abs(float(y @ beta)) + 1e-12 * len(y) * max(C, 1.0):
        return beta
    if qp.objective(cand) < qp.objective(beta) or qp.kkt_gap(cand) > max(qp.kkt_gap(beta), 1e-9):
        return beta
    return cand


def solve_qp(qp: QpProblem, tol: float = 1e-6, max_iter: int = 10**6, polish: bool = True) -> np.ndarray:
    """Maximise ``-0.5 b'Qb + sum(b)`` s.t. ``y'b = 0`` and ``0 <= b <= C_l``.

    SMO stops when the KKT gap drops to ``tol`` or after ``max_iter`` pair
    updates; the free coordinates are then re-solved exactly.
    """
    res = run_smo(qp, tol=tol, max_iter=max_iter)
    return _polish(qp, res.beta) if polish else res.beta


def recover_alpha(train: TrainSet, kernel: KernelSpec, L: np.ndarray, c_r: float, beta: np.ndarray) -> np.ndarray:
    X = train.points
    K = kernel(X, X)
    return _ManifoldSystem(K, L, c_r).solve(_expand(train, np.asarray(beta, dtype=np.float64)))


def _best_f1_bias(f: np.ndarray, y: np.ndarray) -> float:
    vals = np.unique(f)
    cuts = np.concatenate([[vals[0] - 1.0], 0.5 * (vals[1:] + vals[:-1]), [vals[-1] + 1.0]])
    best, best_b = -1.0, 0.0
    for cut in cuts:
        pred = f - cut > 0
        tp = np.sum(pred & (y > 0))
        fp = np.sum(pred & (y < 0))
        fn = np.sum(~pred & (y > 0))
        score = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        b = -float(cut)
        if score > best or (score == best and abs(b) < abs(best_b)):
            best, best_b = score, b
    return best_b


def recover_bias(
    train: TrainSet, kernel: KernelSpec, alpha: np.ndarray, beta: np.ndarray, c_l: float,
    K: np.ndarray | None = None,
) -> float:
    """Median margin offset over interior support vectors.

    Without interior support vectors the bias maximising training F1 on
    the labeled points is used instead.
    """
    if K is None:
        K = kernel(train.labeled, train.points)
    else:
        K = K[: train.l]
    f = K @ alpha
    eps = 1e-8 * c_l
    interior = (beta > eps) & (beta < c_l - eps)
    if interior.any():
        return float(np.median(train.labels[interior] - f[interior]))
    return _best_f1_bias(f, train.labels)


@dataclass
class LapSvmModel:
    alpha: np.ndarray
    bias: float
    train_points: np.ndarray
    kernel: KernelSpec
    mean: np.ndarray
    scale: np.ndarray
    c_l: float
    c_r: float
    graph: GraphSpec = field(default_factory=GraphSpec)

    def __post_init__(self):
        if len(self.alpha) != len(self.train_points):
            raise ValueError("alpha and training points differ in length")

    def standardize(self, X: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(np.asarray(X, dtype=np.float64)) - self.mean) / self.scale

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return self.kernel(self.standardize(X), self.train_points) @ self.alpha + self.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.decision_function(X) > 0, 1, -1)

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "kernel": {"kind": self.kernel.kind, "gamma": float(self.kernel.gamma)},
            "graph": {
                "weighting": self.graph.weighting,
                "bandwidth": self.graph.bandwidth,
                "knn": self.graph.knn,
            },
            "c_l": float(self.c_l),
            "c_r": float(self.c_r),
            "bias": float(self.bias),
            "mean": [float(v) for v in self.mean],
            "scale": [float(v) for v in self.scale],
            "alpha": [float(v) for v in self.alpha],
            "train_points": [[float(v) for v in row] for row in self.train_points],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LapSvmModel":
        if d.get("format") != FORMAT_TAG:
            raise ValueError(f"not a {FORMAT_TAG} model (format={d.get('format')!r})")
        pts = np.array(d["train_points"], dtype=np.float64)
        return cls(
            alpha=np.array(d["alpha"], dtype=np.float64),
            bias=float(d["bias"]),
            train_points=pts.reshape(len(d["alpha"]), -1),
            kernel=KernelSpec(**d["kernel"]),
            mean=np.array(d["mean"], dtype=np.float64),
            scale=np.array(d["scale"], dtype=np.float64),
            c_l=float(d["c_l"]),
            c_r=float(d["c_r"]),
            graph=GraphSpec(**d["graph"]),
        )


def _dump(obj) -> str:
    # floats with 17 significant digits round-trip exactly
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_dump(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, list):
        return "[" + ", ".join(_dump(v) for v in obj) + "]"
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError("cannot serialize non-finite value")
        return format(obj, ".17g")
    return json.dumps(obj)


def save_model(model: LapSvmModel, sink: IO[str]) -> None:
    sink.write(_dump(model.to_dict()))
    sink.write("\n")


def load_model(source: IO[str]) -> LapSvmModel:
    return LapSvmModel.from_dict(json.load(source))


def fit_standardization(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[~(scale > 0)] = 1.0
    return mean, scale


def train(
    data: TrainSet,
    kernel: KernelSpec = KernelSpec(),
    graph: GraphSpec = GraphSpec(),
    c_l: float = 0.6,
    c_r: float = 0.2,
    tol: float = 1e-6,
    max_iter: int = 10**6,
) -> LapSvmModel:
    """Fit a Laplacian SVM; features are standardized over all ``l + u``
    points first and the parameters stored in the model."""
    if not c_l > 0:
        raise ValueError(f"C_l must be positive, got {c_l}")
    if c_r < 0:
        raise ValueError(f"C_r must be non-negative, got {c_r}")
    mean, scale = fit_standardization(data.points)
    std = TrainSet((data.labeled - mean) / scale, data.labels, (data.unlabeled - mean) / scale)
    X = std.points
    L = build_graph(X, graph)
    K = kernel(X, X)
    system = _ManifoldSystem(K, L, c_r)
    qp = _assemble(std, K, system, c_l)
    beta = solve_qp(qp, tol=tol, max_iter=max_iter)
    alpha = system.solve(_expand(std, beta))
    bias = recover_bias(std, kernel, alpha, beta, c_l, K=K)
    return LapSvmModel(alpha, bias, X, kernel, mean, scale, float(c_l), float(c_r), graph)


def predict(model: LapSvmModel, x: Sequence[float]) -> tuple[float, int]:
    score = float(model.decision_function(np.asarray(x, dtype=np.float64))[0])
    return score, (1 if score > 0 else -1)
