import io

import numpy as np
import pytest

from oracles import dense_dual_matrix, qp_active_set_optimum, textbook_svm_decision
from psmdetect import lapsvm
from psmdetect.lapsvm import (
    GraphSpec,
    IllConditionedError,
    KernelSpec,
    LapSvmModel,
    QpConvergenceError,
    QpProblem,
    TrainSet,
    assemble_qp,
    build_graph,
    load_model,
    median_bandwidth,
    recover_alpha,
    recover_bias,
    run_smo,
    save_model,
    solve_qp,
    train,
)


def random_qp(rng, l, C=None):
    X = rng.normal(size=(l, 3))
    y = np.where(np.arange(l) % 2 == 0, 1.0, -1.0)
    rng.shuffle(y)
    Q = (y[:, None] * y[None, :]) * (X @ X.T)
    return QpProblem(Q, y, float(rng.uniform(0.1, 2.0) if C is None else C))


def two_clusters(rng, n, u=0, sep=2.0, dim=2):
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    X = rng.normal(size=(n, dim)) + sep * y[:, None]
    U = rng.normal(size=(u, dim)) + sep * np.where(np.arange(u) % 2 == 0, 1.0, -1.0)[:, None]
    return X, y, U


class TestGraph:
    def test_identical_points(self):
        L = build_graph(np.zeros((2, 3)), GraphSpec(knn=None))
        np.testing.assert_array_equal(L, [[1.0, -1.0], [-1.0, 1.0]])

    @pytest.mark.parametrize("spec", [GraphSpec(), GraphSpec("raw-distance"), GraphSpec(bandwidth=0.5, knn=3),
                                      GraphSpec(knn=None)])
    def test_row_sums(self, spec):
        L = build_graph(np.random.default_rng(0).normal(size=(15, 4)), spec)
        assert np.abs(L.sum(axis=1)).max() <= 1e-12
        np.testing.assert_array_equal(L, L.T)

    def test_psd(self):
        X = np.random.default_rng(1).normal(size=(5, 2))
        L = build_graph(X, GraphSpec(bandwidth=1.0, knn=None))
        assert np.linalg.eigvalsh(L).min() >= -1e-10

    def test_heat_kernel_weights(self):
        X = np.array([[0.0], [1.0], [3.0]])
        F = -build_graph(X, GraphSpec(bandwidth=2.0, knn=None))
        np.fill_diagonal(F, 0)
        assert F[0, 1] == pytest.approx(np.exp(-1 / 8))
        assert F[0, 2] == pytest.approx(np.exp(-9 / 8))

    def test_raw_distance_weights(self):
        X = np.array([[0.0, 0.0], [3.0, 4.0]])
        assert build_graph(X, GraphSpec("raw-distance", knn=None))[0, 1] == -5.0

    def test_median_bandwidth(self):
        assert median_bandwidth(np.array([[0.0], [1.0], [3.0]])) == 2.0

    def test_knn_sparsifies(self):
        X = np.random.default_rng(2).normal(size=(30, 2))
        L = build_graph(X, GraphSpec(knn=2))
        off = L - np.diag(np.diag(L))
        assert (off != 0).sum(axis=1).max() < 29

    def test_errors(self):
        with pytest.raises(ValueError):
            build_graph(np.zeros((1, 2)))
        with pytest.raises(ValueError):
            build_graph(np.array([[0.0], [np.inf]]))
        with pytest.raises(ValueError):
            GraphSpec("cosine")
        with pytest.raises(ValueError):
            GraphSpec(knn=0)
        with pytest.raises(ValueError):
            KernelSpec("poly")


class TestAssemble:
    def test_supervised_collapse(self):
        rng = np.random.default_rng(3)
        X, y, _ = two_clusters(rng, 6)
        ts = TrainSet(X, y)
        qp = assemble_qp(ts, KernelSpec(), build_graph(X), 1.0, 0.0)
        np.testing.assert_allclose(qp.Q, np.outer(y, y) * (X @ X.T), rtol=0, atol=1e-12)

    def test_unlabeled_inert_without_manifold(self):
        rng = np.random.default_rng(4)
        X, y, U = two_clusters(rng, 6, u=4)
        ts = TrainSet(X, y, U)
        qp = assemble_qp(ts, KernelSpec(), build_graph(ts.points), 1.0, 0.0)
        np.testing.assert_allclose(qp.Q, np.outer(y, y) * (X @ X.T), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("kernel", [KernelSpec(), KernelSpec("gaussian", 0.5)])
    def test_dense_reference(self, kernel):
        rng = np.random.default_rng(5)
        X, y, U = two_clusters(rng, 3, u=2)
        y = np.array([1.0, -1.0, 1.0])
        ts = TrainSet(X, y, U)
        L = build_graph(ts.points, GraphSpec(knn=None))
        K = kernel(ts.points, ts.points)
        qp = assemble_qp(ts, kernel, L, 1.0, 0.7)
        ref = dense_dual_matrix(K, L, y, 0.7)
        np.testing.assert_allclose(qp.Q, (ref + ref.T) / 2, rtol=1e-10, atol=1e-12)

    def test_ill_conditioned(self):
        rng = np.random.default_rng(6)
        X, y, U = two_clusters(rng, 4, u=4)
        ts = TrainSet(X, y, U)
        with pytest.raises(IllConditionedError):
            assemble_qp(ts, KernelSpec(), build_graph(ts.points), 1.0, 1e17)

    def test_jitter_warning(self):
        y = np.array([1.0, -1.0])
        ts = TrainSet(np.eye(2), y)
        K = np.array([[1.0, 2.0], [2.0, 1.0]])
        system = lapsvm._ManifoldSystem(K, np.zeros((2, 2)), 0.0)
        with pytest.warns(RuntimeWarning):
            qp = lapsvm._assemble(ts, K, system, 1.0)
        assert np.linalg.eigvalsh(qp.Q).min() > np.linalg.eigvalsh(K).min()

    @pytest.mark.parametrize("kw", [{"c_l": 0.0}, {"c_r": -1.0}])
    def test_bad_costs(self, kw):
        ts = TrainSet(np.eye(2), [1, -1])
        args = {"c_l": 1.0, "c_r": 0.0, **kw}
        with pytest.raises(ValueError):
            assemble_qp(ts, KernelSpec(), np.zeros((2, 2)), **args)

    def test_trainset_validation(self):
        with pytest.raises(ValueError):
            TrainSet(np.eye(2), [1, 1])
        with pytest.raises(ValueError):
            TrainSet(np.eye(2), [1, 0])
        with pytest.raises(ValueError):
            TrainSet(np.eye(3), [1, -1])


class TestSolver:
    def test_identity(self, backend):
        qp = QpProblem(np.eye(2), np.array([1.0, -1.0]), 1.0)
        np.testing.assert_allclose(solve_qp(qp), [1.0, 1.0], atol=1e-12)

    def test_zero_matrix(self, backend):
        qp = QpProblem(np.zeros((4, 4)), np.array([1.0, -1.0, 1.0, -1.0]), 0.6)
        np.testing.assert_allclose(solve_qp(qp), np.full(4, 0.6), atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_brute_force_six(self, backend, seed):
        qp = random_qp(np.random.default_rng(seed), 6)
        best, _ = qp_active_set_optimum(qp.Q, qp.y, qp.c_l)
        beta = solve_qp(qp)
        assert abs(qp.objective(beta) - best) <= 1e-8
        assert qp.kkt_gap(beta) <= 1e-6

    def test_feasibility(self, backend):
        qp = random_qp(np.random.default_rng(11), 30)
        beta = solve_qp(qp)
        assert abs(beta @ qp.y) <= 1e-12
        assert beta.min() >= 0.0 and beta.max() <= qp.c_l

    def test_monotone_history(self, backend):
        qp = random_qp(np.random.default_rng(12), 25)
        res = run_smo(qp, record=True)
        h = np.array(res.history)
        assert len(h) == res.n_iter
        assert h[-1] == pytest.approx(qp.objective(res.beta), rel=1e-9)
        assert np.all(np.diff(h) >= -1e-12 * np.abs(h).max())

    def test_iteration_cap(self, backend):
        qp = random_qp(np.random.default_rng(13), 20)
        with pytest.raises(QpConvergenceError) as exc:
            solve_qp(qp, max_iter=1)
        assert exc.value.n_iter == 1
        assert exc.value.residual > 1e-6
        assert exc.value.beta.shape == (20,)


class TestRecovery:
    def test_alpha_without_manifold(self):
        rng = np.random.default_rng(14)
        X, y, U = two_clusters(rng, 4, u=3)
        ts = TrainSet(X, y, U)
        beta = np.array([0.1, 0.2, 0.3, 0.4])
        a = recover_alpha(ts, KernelSpec(), build_graph(ts.points), 0.0, beta)
        np.testing.assert_array_equal(a, np.concatenate([y * beta, np.zeros(3)]))

    def test_alpha_zero(self):
        rng = np.random.default_rng(15)
        X, y, U = two_clusters(rng, 4, u=3)
        ts = TrainSet(X, y, U)
        a = recover_alpha(ts, KernelSpec(), build_graph(ts.points), 0.5, np.zeros(4))
        np.testing.assert_array_equal(a, np.zeros(7))

    def test_stationarity(self):
        rng = np.random.default_rng(16)
        X, y, U = two_clusters(rng, 8, u=6, sep=0.5)
        ts = TrainSet(X, y, U)
        k = KernelSpec("gaussian", 0.3)
        L = build_graph(ts.points)
        qp = assemble_qp(ts, k, L, 0.6, 0.2)
        beta = solve_qp(qp)
        a = recover_alpha(ts, k, L, 0.2, beta)
        K = k(ts.points, ts.points)
        rhs = K[:, :8] @ (y * beta)
        res = K @ (a + 0.2 * L @ K @ a) - rhs
        assert np.linalg.norm(res) <= 1e-9 * np.linalg.norm(rhs)

    def test_single_interior_point(self):
        ts = TrainSet(np.array([[1.0], [-1.0]]), [1, -1])
        b = recover_bias(ts, KernelSpec(), np.array([0.3, 0.0]), np.array([0.5, 0.0]), 1.0)
        assert b == pytest.approx(0.7, abs=1e-15)

    def test_symmetric_pair(self):
        model = train(TrainSet(np.array([[1.0], [-1.0]]), [1, -1]), c_r=0.0, c_l=10.0)
        assert model.bias == pytest.approx(0.0, abs=1e-12)

    def test_interior_margins(self):
        rng = np.random.default_rng(17)
        X, y, U = two_clusters(rng, 20, u=10, sep=0.7)
        model = train(TrainSet(X, y, U))
        ts = TrainSet(model.train_points[:20], y, model.train_points[20:])
        L = build_graph(ts.points)
        beta = solve_qp(assemble_qp(ts, KernelSpec(), L, 0.6, 0.2))
        f = model.decision_function(X)
        interior = (beta > 1e-6) & (beta < 0.6 - 1e-6)
        assert interior.any()
        assert np.abs(y[interior] * f[interior] - 1).max() <= 1e-5

    def test_bias_fallback(self):
        # all support vectors at the bound: no interior point
        f = np.array([0.5, 0.4, -0.2, -0.3])
        y = np.array([1.0, -1.0, 1.0, -1.0])
        b = lapsvm._best_f1_bias(f, y)
        pred = np.where(f + b > 0, 1, -1)
        assert (pred[y > 0] == 1).all()


class TestModel:
    def test_tie_is_negative(self):
        m = LapSvmModel(np.zeros(2), 0.0, np.eye(2), KernelSpec(), np.zeros(2), np.ones(2), 1.0, 0.0)
        assert lapsvm.predict(m, [3.0, 4.0]) == (0.0, -1)

    def test_training_labels_recovered(self):
        rng = np.random.default_rng(18)
        X, y, U = two_clusters(rng, 30, u=10, sep=3.0)
        model = train(TrainSet(X, y, U))
        f = model.decision_function(X)
        strong = np.abs(f) > 1.5
        assert strong.any()
        assert (model.predict(X[strong]) == y[strong]).all()

    def test_permutation_invariance(self):
        rng = np.random.default_rng(19)
        X, y, U = two_clusters(rng, 16, u=8, sep=1.0)
        Z = rng.normal(size=(20, 2))
        base = train(TrainSet(X, y, U)).decision_function(Z)
        p, q = rng.permutation(16), rng.permutation(8)
        perm = train(TrainSet(X[p], y[p], U[q])).decision_function(Z)
        np.testing.assert_allclose(perm, base, atol=1e-6)

    def test_linear_svm_equivalence(self):
        rng = np.random.default_rng(20)
        X, y, _ = two_clusters(rng, 30, sep=0.8)
        model = train(TrainSet(X, y), c_l=0.6, c_r=0.0)
        Z = rng.normal(size=(10, 2))
        ref = textbook_svm_decision(model.standardize(X), y, 0.6, model.standardize(Z))
        np.testing.assert_allclose(model.decision_function(Z), ref, atol=1e-6)

    def test_roundtrip(self):
        rng = np.random.default_rng(21)
        X, y, U = two_clusters(rng, 12, u=4)
        model = train(TrainSet(X, y, U), kernel=KernelSpec("gaussian", 0.7), graph=GraphSpec(knn=3))
        buf = io.StringIO()
        save_model(model, buf)
        text = buf.getvalue()
        again = load_model(io.StringIO(text))
        Z = rng.normal(size=(5, 2))
        np.testing.assert_array_equal(again.decision_function(Z), model.decision_function(Z))
        buf2 = io.StringIO()
        save_model(again, buf2)
        assert buf2.getvalue() == text

    def test_wrong_format(self):
        with pytest.raises(ValueError):
            load_model(io.StringIO('{"format": "other"}'))

    def test_deterministic_training(self):
        rng = np.random.default_rng(22)
        X, y, U = two_clusters(rng, 20, u=6)
        bufs = []
        for _ in range(2):
            b = io.StringIO()
            save_model(train(TrainSet(X, y, U)), b)
            bufs.append(b.getvalue())
        assert bufs[0] == bufs[1]

    def test_constant_feature(self):
        X = np.array([[1.0, 5.0], [2.0, 5.0], [-1.0, 5.0], [-2.0, 5.0]])
        model = train(TrainSet(X, [1, 1, -1, -1]))
        assert model.scale[1] == 1.0
        assert (model.predict(X) == [1, 1, -1, -1]).all()


class TestManifold:
    def test_penalty_nonnegative(self):
        rng = np.random.default_rng(23)
        X, y, U = two_clusters(rng, 10, u=10, sep=0.5)
        model = train(TrainSet(X, y, U), graph=GraphSpec("raw-distance"))
        f = model.decision_function(np.vstack([X, U]))
        L = build_graph(model.train_points, model.graph)
        assert f @ L @ f >= 0

    @pytest.mark.parametrize("kind", ["linear", "gaussian"])
    @pytest.mark.parametrize("seed", range(8))
    def test_smoothness_direction(self, seed, kind):
        rng = np.random.default_rng(100 + seed)
        X, y, U = two_clusters(rng, 10, u=40, sep=3.0)
        pts = np.vstack([X, U])
        F = -build_graph(pts, GraphSpec())
        iu = np.triu_indices(len(pts), 1)
        w = F[iu]
        top = (w > 0) & (w >= np.quantile(w[w > 0], 0.9))
        first, second = iu[0][top], iu[1][top]
        kernel = KernelSpec(kind, 0.5)

        def disagreements(c_r):
            lab = train(TrainSet(X, y, U), kernel=kernel, c_r=c_r).predict(pts)
            return int(np.sum(lab[first] != lab[second]))

        counts = [disagreements(c) for c in (0.0, 0.2, 1.0, 5.0)]
        assert all(b <= counts[0] for b in counts[1:])
