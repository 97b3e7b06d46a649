"""Synthetic-data generators, metrics, and domain-type round trips."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from covdecomp.graphs import is_decomposable
from covdecomp.model_core import (
    FactorState,
    GroundTruth,
    Hyperparameters,
    ObservationMatrix,
    SimulationSpec,
    SparseState,
    assemble_sigma,
    matrix_losses,
    ring_of_squares_graph,
    simulate,
    support_metrics,
)


class TestSimulate:
    def test_model1_structure(self):
        data, truth = simulate(SimulationSpec(1, 50, 50, seed=7))
        assert truth.rank == 3
        assert np.array_equal(truth.S, np.eye(50))
        assert truth.edges == frozenset()
        sv = np.linalg.svd(truth.L, compute_uv=False)
        assert np.allclose(sv[:3], 8.0 * 50 / 50)
        assert np.allclose(sv[3:], 0.0, atol=1e-10)
        assert data.q == 50 and data.n == 50

    def test_model1_singular_values_scale_with_q_over_n(self):
        _, truth = simulate(SimulationSpec(1, 20, 50, seed=3))
        sv = np.linalg.svd(truth.L, compute_uv=False)
        assert np.allclose(sv[:3], 8.0 * 20 / 50)

    def test_model2_block_structure(self):
        _, truth = simulate(SimulationSpec(2, 50, 50, seed=7))
        assert truth.rank == 1
        assert truth.S[0, 4] == pytest.approx(0.7)
        assert truth.S[0, 5] == 0.0
        assert truth.S[0, 0] == pytest.approx(1.0)
        assert len(truth.edges) == 10 * (50 // 5)
        assert np.allclose(truth.L, 0.3)

    def test_model3_combines_models_1_and_2(self):
        _, truth = simulate(SimulationSpec(3, 50, 50, seed=7))
        assert truth.rank == 3
        assert truth.S[0, 4] == pytest.approx(0.7)
        assert len(np.linalg.svd(truth.L, compute_uv=False).nonzero()[0]) >= 3

    def test_model4_ar1_residual(self):
        _, truth = simulate(SimulationSpec(4, 30, 100, seed=7))
        assert truth.rank == 1
        assert truth.S[0, 4] == pytest.approx(0.7**4)
        assert truth.S[0, 4] == pytest.approx(0.2401)
        assert truth.edges == frozenset((j, j + 1) for j in range(29))
        # AR(1) precision is tridiagonal
        assert np.abs(np.triu(truth.C, k=2)).max() < 1e-12
        assert np.linalg.norm(truth.L) == pytest.approx(4.0)

    def test_model5_split_support_two_factors(self):
        _, truth = simulate(SimulationSpec(5, 30, 300, seed=7))
        assert truth.rank == 2
        sv = np.linalg.svd(truth.L, compute_uv=False)
        assert np.allclose(sv[:2], 4.0)
        # the two loading vectors live on complementary halves
        assert np.abs(truth.L[:15, 15:]).max() < 1e-12

    def test_model6_nonchordal_graph(self):
        graph = ring_of_squares_graph(30)
        assert graph.edge_count == 40
        assert not is_decomposable(graph)
        _, truth = simulate(SimulationSpec(6, 30, 300, seed=7))
        assert truth.rank == 1
        assert truth.edges == frozenset(graph.edges)
        assert np.linalg.eigvalsh(truth.C).min() > 0

    @pytest.mark.parametrize("model_id,q", [(1, 20), (2, 25), (3, 50), (4, 30), (5, 30), (6, 30)])
    def test_sigma_always_spd(self, model_id, q):
        for seed in range(3):
            _, truth = simulate(SimulationSpec(model_id, q, 60, seed=seed))
            np.linalg.cholesky(truth.Sigma)
            assert np.allclose(truth.Sigma, truth.L + truth.S)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            SimulationSpec(7, 30, 50)
        with pytest.raises(ValueError):
            SimulationSpec(2, 21, 50)  # blocks need divisibility by 5
        with pytest.raises(ValueError):
            SimulationSpec(6, 31, 50)

    def test_empirical_covariance_converges(self):
        spec = SimulationSpec(2, 5, 1_000_000, seed=4)
        data, truth = simulate(spec)
        emp = data.data @ data.data.T / spec.n
        rel = np.linalg.norm(emp - truth.Sigma) / np.linalg.norm(truth.Sigma)
        assert rel < 0.01

    def test_deterministic_given_seed(self):
        a, _ = simulate(SimulationSpec(4, 30, 40, seed=9))
        b, _ = simulate(SimulationSpec(4, 30, 40, seed=9))
        assert np.array_equal(a.data, b.data)


class TestAssembleSigma:
    def _factor(self, q, r, loadings, z, tau2):
        return FactorState(
            loadings=loadings,
            scores=np.zeros((r, 4)),
            indicators=np.asarray(z, dtype=np.int64),
            variances=np.asarray(tau2, dtype=float),
            inclusion_probs=np.full(r, 0.5),
            pi=0.5,
        )

    def test_all_inactive_returns_residual(self):
        q = 3
        s = np.eye(q) * 2.0
        factor = self._factor(q, 2, np.ones((q, 2)), [0, 0], [4.0, 4.0])
        sparse = SparseState(S=s, lam=1.0, rho=np.full((q, q), 0.5))
        assert np.array_equal(assemble_sigma(factor, sparse), s)

    def test_single_unit_loading(self):
        q = 3
        loadings = np.zeros((q, 1))
        loadings[0, 0] = 1.0
        factor = self._factor(q, 1, loadings, [1], [4.0])
        sparse = SparseState(S=np.eye(q), lam=1.0, rho=np.full((q, q), 0.5))
        expected = np.eye(q)
        expected[0, 0] += 4.0
        assert np.allclose(assemble_sigma(factor, sparse), expected)

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(5)
        q, r = 4, 3
        loadings = rng.standard_normal((q, r))
        z = rng.integers(0, 2, r)
        tau2 = rng.uniform(0.5, 3.0, r)
        s = np.eye(q)
        factor = self._factor(q, r, loadings, z, tau2)
        sparse = SparseState(S=s, lam=1.0, rho=np.full((q, q), 0.5))
        expected = s.copy()
        for i in range(q):
            for j in range(q):
                for k in range(r):
                    expected[i, j] += loadings[i, k] * z[k] * tau2[k] * loadings[j, k]
        assert np.allclose(assemble_sigma(factor, sparse), expected)

    def test_dimension_mismatch_rejected(self):
        factor = self._factor(3, 1, np.ones((3, 1)), [1], [1.0])
        sparse = SparseState(S=np.eye(4), lam=1.0, rho=np.full((4, 4), 0.5))
        with pytest.raises(ValueError):
            assemble_sigma(factor, sparse)


class TestMetrics:
    def test_identical_matrices(self):
        m = np.arange(9.0).reshape(3, 3)
        assert matrix_losses(m, m) == (0.0, 0.0)

    def test_identity_difference(self):
        l1, fro = matrix_losses(2 * np.eye(2), np.eye(2))
        assert l1 == pytest.approx(2.0)
        assert fro == pytest.approx(np.sqrt(2.0))

    def test_matches_hand_summation(self):
        rng = np.random.default_rng(3)
        a, b = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
        l1, fro = matrix_losses(a, b)
        assert l1 == pytest.approx(sum(abs(a[i, j] - b[i, j]) for i in range(3) for j in range(3)))
        assert fro == pytest.approx(
            np.sqrt(sum((a[i, j] - b[i, j]) ** 2 for i in range(3) for j in range(3)))
        )

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            matrix_losses(np.eye(2), np.eye(3))

    def test_support_metrics_examples(self):
        assert support_metrics({(0, 1)}, {(0, 1)}) == (0, 0)
        assert support_metrics(set(), {(j, j + 1) for j in range(10)}) == (0, 10)
        assert support_metrics({(1, 0), (2, 3)}, {(0, 1)}) == (1, 0)

    @given(st.data())
    @settings(max_examples=100, deadline=None)
    def test_support_metrics_matches_set_oracle(self, data):
        pairs = [(j, jp) for j in range(6) for jp in range(j + 1, 6)]
        est = {p for p in pairs if data.draw(st.booleans())}
        true = {p for p in pairs if data.draw(st.booleans())}
        fp, fn = support_metrics(est, true)
        assert fp == len(est - true)
        assert fn == len(true - est)


class TestTypesAndIO:
    def test_observation_matrix_validation(self):
        with pytest.raises(ValueError):
            ObservationMatrix(np.array([[1.0, np.nan]]))

    def test_centering(self):
        data = ObservationMatrix(np.array([[1.0, 3.0], [2.0, 2.0]]))
        centered = data.centered()
        assert np.allclose(centered.data.mean(axis=1), 0.0)

    def test_csv_round_trip(self, tmp_path):
        data = ObservationMatrix(np.random.default_rng(0).standard_normal((4, 7)))
        path = tmp_path / "obs.csv"
        data.to_csv(path)
        again = ObservationMatrix.from_csv(path)
        assert np.allclose(data.data, again.data)

    def test_non_numeric_csv_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,2.0\noops,4.0\n")
        with pytest.raises(ValueError):
            ObservationMatrix.from_csv(path)

    def test_ground_truth_json_round_trip(self, tmp_path):
        _, truth = simulate(SimulationSpec(4, 30, 20, seed=1))
        path = tmp_path / "truth.json"
        truth.to_json(path)
        again = GroundTruth.from_json(path)
        assert np.allclose(truth.Sigma, again.Sigma)
        assert np.allclose(truth.C, again.C)
        assert truth.edges == again.edges
        assert truth.rank == again.rank

    def test_hyperparameter_defaults(self):
        hyper = Hyperparameters.defaults(50)
        assert hyper.r == 10
        assert hyper.a_pi == pytest.approx(1 / 50)
        assert hyper.b_pi == pytest.approx(1 - 1 / 50)
        assert hyper.b_p == float(hyper.r)
        assert hyper.a_rho == 0.5
        lasso = Hyperparameters.defaults(50, variant="gfm-lasso")
        assert (lasso.a_rho, lasso.b_rho) == (1.0, 50.0)
        with pytest.raises(ValueError):
            Hyperparameters.defaults(5, r=9)
        with pytest.raises(ValueError):
            Hyperparameters(r=2, a_tau=-1.0)
