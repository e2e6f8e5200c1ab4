import numpy as np
import pytest

from graphadapt import (
    GenerationError,
    PermutationMap,
    SHIFT_COUNTER,
    graph_from_edges,
    inf_norm_max_power,
    is_connected,
    knn_geometric,
    load_coords,
    load_edge_list,
    normalize_gso,
    permute,
    permute_signal,
    sample_link_loss,
    save_edge_list,
    sbm_generate,
    shift,
    spectral_radius,
)
from conftest import random_graph
import oracles


class TestConstruction:
    def test_neighbor_lists_match_edges(self):
        g = graph_from_edges(4, [(0, 1), (2, 1), (0, 3)])
        assert [list(nb) for nb in g.neighbor_lists] == [[1, 3], [0, 2], [1], [0]]
        assert g.m == 3

    def test_gso_symmetric_and_pattern(self):
        g = graph_from_edges(3, [(0, 1), (1, 2)], [2.0, 3.0])
        S = g.gso.toarray()
        assert np.array_equal(S, S.T)
        assert S[0, 2] == 0.0 and S[0, 1] == 2.0 and S[1, 2] == 3.0
        assert np.all(np.diag(S) == 0.0)

    def test_rejects_self_loops_and_duplicates(self):
        with pytest.raises(ValueError):
            graph_from_edges(3, [(0, 0)])
        with pytest.raises(ValueError):
            graph_from_edges(3, [(0, 1), (1, 0)])
        with pytest.raises(ValueError):
            graph_from_edges(3, [(0, 4)])


class TestSbm:
    def test_paper_scale_blocks(self):
        g, labels = sbm_generate(40, 4, 0.8, 0.1, seed=0)
        assert g.n == 40
        assert np.array_equal(np.bincount(labels), [10, 10, 10, 10])
        assert is_connected(g)

    def test_two_cliques_never_connect(self):
        with pytest.raises(GenerationError):
            sbm_generate(4, 2, 1.0, 0.0, seed=0)

    def test_all_probability_one_is_complete(self):
        g, _ = sbm_generate(6, 2, 1.0, 1.0, seed=0)
        assert g.m == 15

    def test_non_divisible_rejected(self):
        with pytest.raises(ValueError):
            sbm_generate(10, 3, 0.8, 0.1, seed=0)


class TestKnnGeometric:
    def test_collinear_points_make_path(self):
        coords = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]
        g = knn_geometric(coords, k=1)
        assert sorted(map(tuple, g.edges)) == [(0, 1), (1, 2)]
        assert g.degrees[1] == 2

    def test_square_union_symmetrization(self):
        coords = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
        g = knn_geometric(coords, k=1)
        assert np.all(g.degrees >= 1)

    def test_k_equals_n_minus_1_complete(self):
        rng = np.random.default_rng(3)
        coords = rng.random((6, 2))
        g = knn_geometric(coords, k=5)
        assert g.m == 15

    def test_k_too_large_rejected(self):
        with pytest.raises(ValueError):
            knn_geometric(np.zeros((3, 2)) + np.arange(3)[:, None], k=3)

    def test_duplicate_coordinates_get_weight_one(self):
        coords = [(0.0, 0.0), (0.0, 0.0), (3.0, 0.0)]
        g = knn_geometric(coords, k=1)
        i = [tuple(e) for e in g.edges].index((0, 1))
        assert g.weights[i] == 1.0

    def test_gaussian_weights_from_mean_square_distance(self):
        coords = [(0.0, 0.0), (1.0, 0.0), (2.5, 0.0)]
        g = knn_geometric(coords, k=1)
        d2 = {(0, 1): 1.0, (1, 2): 2.25}
        sigma2 = np.mean(list(d2.values()))
        for (i, j), w in zip(map(tuple, g.edges), g.weights):
            assert w == pytest.approx(np.exp(-d2[(i, j)] / sigma2), rel=1e-12)


class TestNormalize:
    def test_k2_unchanged(self, single_edge):
        g = normalize_gso(single_edge)
        assert np.allclose(g.weights, 1.0, atol=1e-9)

    def test_k3_entries_half(self):
        g = normalize_gso(graph_from_edges(3, [(0, 1), (0, 2), (1, 2)]))
        assert np.allclose(g.gso.toarray()[np.triu_indices(3, 1)], 0.5, atol=1e-9)

    def test_star4_entries(self):
        g = normalize_gso(graph_from_edges(4, [(0, 1), (0, 2), (0, 3)]))
        assert np.allclose(g.weights, 1.0 / np.sqrt(3.0), atol=1e-9)

    def test_unit_radius_after_renormalization(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            g = normalize_gso(random_graph(rng))
            assert abs(spectral_radius(g) - 1.0) <= 1e-6

    def test_needs_an_edge(self):
        with pytest.raises(ValueError):
            normalize_gso(graph_from_edges(3, np.zeros((0, 2))))


class TestShift:
    def test_path_example(self, path3):
        assert np.array_equal(shift(path3, [1.0, 2.0, 3.0]), [2.0, 4.0, 2.0])

    def test_zero_signal(self, path3):
        assert np.array_equal(shift(path3, np.zeros(3)), np.zeros(3))

    def test_dimension_mismatch(self, path3):
        with pytest.raises(ValueError):
            shift(path3, np.zeros(4))

    def test_degree_vector_matches_dense_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            g = random_graph(rng)
            W = oracles.dense_matrix(g)
            ones = np.ones(g.n)
            assert np.array_equal(shift(g, ones), oracles.dense_shift(W, ones))

    def test_matches_dense_oracle_bitwise(self):
        rng = np.random.default_rng(13)
        for _ in range(25):
            g = random_graph(rng)
            W = oracles.dense_matrix(g)
            x = rng.standard_normal(g.n)
            assert np.array_equal(shift(g, x), oracles.dense_shift(W, x))

    def test_counter_increments(self, path3):
        SHIFT_COUNTER.reset()
        shift(path3, np.zeros(3))
        shift(path3, np.zeros(3))
        assert SHIFT_COUNTER.count == 2


class TestPermute:
    def test_identity(self, path3):
        g = permute(path3, PermutationMap.identity(3))
        assert np.array_equal(g.edges, path3.edges)
        assert np.array_equal(g.gso.toarray(), path3.gso.toarray())

    def test_reverse_path_isomorphic(self, path3):
        g = permute(path3, PermutationMap(np.array([2, 1, 0])))
        assert sorted(g.degrees) == sorted(path3.degrees)

    def test_roundtrip_exact(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            g = random_graph(rng)
            p = PermutationMap.random(g.n, rng)
            back = permute(permute(g, p), p.inverse())
            assert np.array_equal(back.edges, g.edges)
            assert np.array_equal(back.weights, g.weights)
            assert (back.gso != g.gso).nnz == 0

    def test_signal_consistent_with_matrix(self):
        rng = np.random.default_rng(9)
        g = random_graph(rng)
        p = PermutationMap.random(g.n, rng)
        x = rng.standard_normal(g.n)
        # P with rows e_{perm[i]} makes x' = P^T x and S' = P^T S P
        P = np.zeros((g.n, g.n))
        P[np.arange(g.n), p.perm] = 1.0
        assert np.allclose(permute_signal(x, p), P.T @ x)
        assert np.allclose(permute(g, p).gso.toarray(), P.T @ g.gso.toarray() @ P)

    def test_non_bijective_rejected(self):
        with pytest.raises(ValueError):
            PermutationMap(np.array([0, 0, 1]))


class TestLinkLoss:
    def test_zero_drop_identical(self):
        rng = np.random.default_rng(2)
        g = random_graph(rng)
        g2 = sample_link_loss(g, 0.0, seed=4)
        assert np.array_equal(g2.edges, g.edges)
        assert np.array_equal(g2.weights, g.weights)

    def test_binomial_survival_statistics(self):
        g, _ = sbm_generate(20, 2, 0.9, 0.4, seed=1)
        m = g.m
        p = 0.1
        counts = [sample_link_loss(g, p, seed=s).m for s in range(1000)]
        mean = np.mean(counts)
        sigma = np.sqrt(m * p * (1 - p)) / np.sqrt(1000)
        assert abs(mean - (1 - p) * m) <= 3 * sigma

    def test_single_edge_deterministic(self, single_edge):
        first = sample_link_loss(single_edge, 0.5, seed=123).m
        for _ in range(5):
            assert sample_link_loss(single_edge, 0.5, seed=123).m == first

    def test_never_adds_edges(self):
        rng = np.random.default_rng(8)
        g = random_graph(rng)
        original = {tuple(e) for e in g.edges}
        for s in range(20):
            survived = {tuple(e) for e in sample_link_loss(g, 0.3, seed=s).edges}
            assert survived <= original


class TestInfNormMaxPower:
    def test_lower_bounded_by_one_when_normalized(self):
        rng = np.random.default_rng(21)
        for _ in range(5):
            g = normalize_gso(random_graph(rng, connected=True))
            assert inf_norm_max_power(g, 4) >= 1.0 - 1e-9

    def test_half_identity_like_diagonal(self):
        # S = I/2 is not constructible from edges; emulate with a 2-cycle of
        # weight 1/2 whose powers alternate between 1/2 within norm
        g = graph_from_edges(2, [(0, 1)], [0.5])
        assert inf_norm_max_power(g, 3) == pytest.approx(0.5)

    def test_normalized_triangle(self):
        g = normalize_gso(graph_from_edges(3, [(0, 1), (0, 2), (1, 2)]))
        assert inf_norm_max_power(g, 2) == pytest.approx(1.0, abs=1e-9)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            g = random_graph(rng)
            W = oracles.dense_matrix(g)
            assert inf_norm_max_power(g, 3) == pytest.approx(
                oracles.brute_inf_norm_max_power(W, 3), rel=1e-12)


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(31)
        g = random_graph(rng)
        path = tmp_path / "graph.txt"
        save_edge_list(g, path)
        g2 = load_edge_list(path)
        assert g2.n == g.n
        assert np.array_equal(g2.edges, g.edges)
        assert np.array_equal(g2.weights, g.weights)

    def test_header_checked(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("3 5\n0 1 1.0\n")
        with pytest.raises(ValueError):
            load_edge_list(path)

    def test_coords_file(self, tmp_path):
        path = tmp_path / "coords.txt"
        path.write_text("1 0.5 0.25\n0 0.0 1.0\n")
        coords = load_coords(path)
        assert np.array_equal(coords, [[0.0, 1.0], [0.5, 0.25]])
        path.write_text("0 0.0 1.0\n2 1.0 1.0\n")
        with pytest.raises(ValueError):
            load_coords(path)
