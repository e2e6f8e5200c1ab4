import numpy as np
import pytest

from graphadapt import (
    ActivationParams,
    PermutationMap,
    ga_kernel_activation,
    ga_localized_activation,
    gaussian_kernel,
    graph_from_edges,
    inf_norm_max_power,
    kernel_graph_filter,
    kernel_operator,
    khop_sets,
    lipschitz_bound,
    localized_activation,
    normalize_gso,
    permute,
    permute_signal,
    relu,
    sample_link_loss,
    shift,
    shifted_localized_graph_filter,
    shifted_localized_operator,
)
from conftest import random_graph, small_sbm
import oracles

X123 = np.array([1.0, 2.0, 3.0])


class TestRelu:
    def test_values(self):
        assert np.array_equal(relu([-1.0, 0.0, 2.0]), [0.0, 0.0, 2.0])

    def test_zero(self):
        assert np.array_equal(relu(np.zeros(4)), np.zeros(4))

    def test_nonnegative_unchanged(self):
        x = np.array([0.5, 1.0, 7.0])
        assert np.array_equal(relu(x), x)


class TestKhopSets:
    def test_path_depth_two(self, path3):
        hoods = khop_sets(path3, 2)
        assert list(hoods.sets[1][0]) == [1, 2]
        assert list(hoods.sets[1][1]) == [0, 2]

    def test_depth_one_equals_neighbor_lists(self):
        rng = np.random.default_rng(0)
        g = random_graph(rng)
        hoods = khop_sets(g, 1)
        for i in range(g.n):
            assert np.array_equal(hoods.sets[0][i], g.neighbor_lists[i])

    def test_complete_graph_saturates(self):
        g = graph_from_edges(4, [(i, j) for i in range(4) for j in range(i + 1, 4)])
        hoods = khop_sets(g, 3)
        for k in range(3):
            for i in range(4):
                assert list(hoods.sets[k][i]) == [j for j in range(4) if j != i]

    def test_balls_nested(self):
        rng = np.random.default_rng(1)
        g = random_graph(rng)
        hoods = khop_sets(g, 3)
        for i in range(g.n):
            for k in range(2):
                assert set(hoods.sets[k][i]) <= set(hoods.sets[k + 1][i])


class TestLocalizedActivation:
    def test_reduces_to_relu(self, path3):
        params = ActivationParams("localized_max", beta=1.0, h_sigma=[0.0])
        hoods = khop_sets(path3, 1)
        x = np.array([-1.0, 2.0, -3.0])
        assert np.array_equal(localized_activation(path3, x, params, hoods), relu(x))

    def test_path_max(self, path3):
        params = ActivationParams("localized_max", beta=0.0, h_sigma=[1.0])
        out = localized_activation(path3, X123, params, khop_sets(path3, 1))
        assert np.array_equal(out, [2.0, 3.0, 2.0])

    def test_path_median(self, path3):
        params = ActivationParams("localized_median", beta=0.0, h_sigma=[1.0])
        out = localized_activation(path3, X123, params, khop_sets(path3, 1))
        assert np.array_equal(out, [2.0, 2.0, 2.0])

    def test_wrong_kind_rejected(self, path3):
        with pytest.raises(ValueError):
            localized_activation(path3, X123, ActivationParams("ga_max", h_sigma=[1.0]),
                                 khop_sets(path3, 1))

    def test_depth_shortfall_rejected(self, path3):
        params = ActivationParams("localized_max", h_sigma=[1.0, 1.0])
        with pytest.raises(ValueError):
            localized_activation(path3, X123, params, khop_sets(path3, 1))


class TestShiftedLocalizedOperator:
    def test_path_max_example(self, path3):
        # Sx = [2, 4, 2]; one-hop maxima of the shifted signal are [4, 2, 4]
        assert np.array_equal(
            shifted_localized_operator(path3, X123, 1, "max"), [4.0, 2.0, 4.0])

    def test_constant_shifted_signal(self):
        g = graph_from_edges(2, [(0, 1)])
        x = np.array([3.0, 3.0])
        for kind in ("max", "median"):
            assert np.array_equal(
                shifted_localized_operator(g, x, 1, kind), [3.0, 3.0])

    def test_single_edge_swap(self, single_edge):
        a, b = 0.25, -1.5
        z = shifted_localized_operator(single_edge, [a, b], 1, "max")
        assert np.array_equal(z, [a, b])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            g = random_graph(rng)
            W = oracles.dense_matrix(g)
            x = rng.standard_normal(g.n)
            k = int(rng.integers(1, 4))
            for kind in ("max", "median"):
                got = shifted_localized_operator(g, x, k, kind)
                assert np.array_equal(got, oracles.brute_slo(W, x, k, kind))


class TestShiftedLocalizedGraphFilter:
    def test_single_tap_reduction(self, path3):
        got = shifted_localized_graph_filter(path3, X123, [1.0], "max")
        assert np.array_equal(got, shifted_localized_operator(path3, X123, 1, "max"))

    def test_zero_taps(self, path3):
        got = shifted_localized_graph_filter(path3, X123, [0.0, 0.0], "median")
        assert np.array_equal(got, np.zeros(3))

    def test_sum_of_operators(self, path3):
        got = shifted_localized_graph_filter(path3, X123, [1.0, 1.0], "max")
        want = (shifted_localized_operator(path3, X123, 1, "max")
                + shifted_localized_operator(path3, X123, 2, "max"))
        assert np.array_equal(got, want)


class TestGaLocalized:
    def test_reduces_to_relu(self, path3):
        params = ActivationParams("ga_max", beta=1.0, h_sigma=[0.0])
        z = np.array([-2.0, 1.0, 0.5])
        assert np.array_equal(ga_localized_activation(path3, z, params), relu(z))

    def test_reduces_to_operator(self, path3):
        params = ActivationParams("ga_max", beta=0.0, h_sigma=[1.0])
        got = ga_localized_activation(path3, X123, params)
        assert np.array_equal(got, shifted_localized_operator(path3, X123, 1, "max"))

    def test_composed_example(self, path3):
        params = ActivationParams("ga_max", beta=1.0, h_sigma=[1.0])
        got = ga_localized_activation(path3, X123, params)
        assert np.array_equal(got, [5.0, 4.0, 7.0])


class TestGaussianKernel:
    def test_equal_inputs(self):
        assert gaussian_kernel([1.0, 2.0], [1.0, 2.0], 0.5) == 1.0

    def test_distance_gamma(self):
        g = 0.37
        val = gaussian_kernel([g, 0.0], [0.0, 0.0], g)
        assert val == pytest.approx(np.exp(-0.5), abs=1e-15)

    def test_far_apart_vanishes(self):
        g = 0.1
        assert gaussian_kernel([8 * g], [0.0], g) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            gaussian_kernel([1.0], [1.0, 2.0], 1.0)


class TestKernelOperator:
    def test_constant_shifted_signal(self):
        g = graph_from_edges(2, [(0, 1)])
        assert np.array_equal(kernel_operator(g, [2.0, 2.0], 1, 0.3), [1.0, 1.0])

    def test_single_edge(self, single_edge):
        a, b, gamma = 0.4, -0.2, 0.7
        # Sx = [b, a]; each node's single neighbor difference is (a - b)
        want = np.exp(-((a - b) ** 2) / (2 * gamma**2))
        got = kernel_operator(single_edge, [a, b], 1, gamma)
        assert np.allclose(got, [want, want], atol=1e-15)

    def test_unit_difference_at_gamma(self, single_edge):
        gamma = 0.1
        got = kernel_operator(single_edge, [0.05, -0.05], 1, gamma)
        assert got[0] == pytest.approx(np.exp(-0.5), abs=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            g = random_graph(rng)
            W = oracles.dense_matrix(g)
            x = rng.standard_normal(g.n)
            k = int(rng.integers(1, 4))
            got = kernel_operator(g, x, k, 0.4)
            want = oracles.brute_kernel_op(W, x, k, 0.4)
            assert np.max(np.abs(got - want)) <= 1e-12

    def test_range(self):
        # gamma large enough that exp cannot underflow at these signal scales
        rng = np.random.default_rng(4)
        for _ in range(10):
            g = random_graph(rng)
            out = kernel_operator(g, rng.standard_normal(g.n), 1, 0.5)
            assert np.all(out > 0.0) and np.all(out <= 1.0)


class TestKernelGraphFilter:
    def test_single_tap(self, path3):
        got = kernel_graph_filter(path3, X123, [1.0], 0.5)
        assert np.array_equal(got, kernel_operator(path3, X123, 1, 0.5))

    def test_zero_taps(self, path3):
        assert np.array_equal(kernel_graph_filter(path3, X123, [0.0], 0.5), np.zeros(3))

    def test_constant_signal_sums_taps(self):
        g = graph_from_edges(3, [(0, 1), (0, 2), (1, 2)])
        h = [0.3, -0.2, 1.1]
        got = kernel_graph_filter(g, np.full(3, 2.5), h, 0.5)
        assert np.allclose(got, sum(h), atol=1e-12)


class TestGaKernel:
    def test_reduces_to_relu(self, path3):
        params = ActivationParams("ga_kernel", beta=1.0, h_sigma=[0.0], gamma=0.1)
        z = np.array([-1.0, 0.5, 2.0])
        assert np.array_equal(ga_kernel_activation(path3, z, params), relu(z))

    def test_constant_input(self):
        g = graph_from_edges(3, [(0, 1), (1, 2)])
        params = ActivationParams("ga_kernel", beta=0.0, h_sigma=[0.4, 0.6], gamma=0.2)
        got = ga_kernel_activation(g, np.full(3, 1.5), params)
        # constant inputs stay constant under any shift only for regular
        # graphs; just verify against the brute-force composition instead
        W = oracles.dense_matrix(g)
        want = oracles.brute_ga_kernel(W, np.full(3, 1.5), 0.0, [0.4, 0.6], 0.2)
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_reduces_to_operator(self, path3):
        params = ActivationParams("ga_kernel", beta=0.0, h_sigma=[1.0], gamma=0.3)
        got = ga_kernel_activation(path3, X123, params)
        assert np.allclose(got, kernel_operator(path3, X123, 1, 0.3), atol=1e-15)


class TestLipschitzBound:
    def test_formula_value(self):
        g = normalize_gso(graph_from_edges(3, [(0, 1), (0, 2), (1, 2)]))
        params = ActivationParams("ga_max", beta=1.0, h_sigma=[0.5, 0.5])
        assert lipschitz_bound(params, g) == pytest.approx(2.0, abs=1e-9)

    def test_zero_taps_gives_abs_beta(self):
        g = normalize_gso(graph_from_edges(2, [(0, 1)]))
        params = ActivationParams("ga_max", beta=-1.75, h_sigma=[0.0])
        assert lipschitz_bound(params, g) == pytest.approx(1.75)

    def test_single_tap_unit(self):
        g = normalize_gso(graph_from_edges(2, [(0, 1)]))
        params = ActivationParams("ga_max", beta=0.0, h_sigma=[1.0])
        assert lipschitz_bound(params, g) == pytest.approx(1.0, abs=1e-9)

    def test_wrong_kind(self):
        g = graph_from_edges(2, [(0, 1)])
        with pytest.raises(ValueError):
            lipschitz_bound(ActivationParams("ga_median", h_sigma=[1.0]), g)

    def test_lipschitz_property_sampled(self):
        rng = np.random.default_rng(5)
        for seed in range(3):
            g, _ = small_sbm(seed, n=12, c=2)
            params = ActivationParams(
                "ga_max", beta=float(rng.uniform(-1, 1)),
                h_sigma=rng.uniform(-1, 1, size=2))
            bound = lipschitz_bound(params, g)
            X = rng.standard_normal((g.n, 500))
            Xt = X + rng.standard_normal((g.n, 500)) * rng.uniform(0.01, 2)
            za = ga_localized_activation(g, X, params)
            zb = ga_localized_activation(g, Xt, params)
            lhs = np.max(np.abs(zb - za), axis=0)
            rhs = bound * np.max(np.abs(Xt - X), axis=0)
            assert np.all(lhs <= rhs + 1e-12)


class TestEquivarianceAndConventions:
    @pytest.mark.parametrize("kind", ["localized_max", "localized_median",
                                      "ga_max", "ga_median", "ga_kernel"])
    def test_permutation_equivariance(self, kind):
        rng = np.random.default_rng(6)
        for _ in range(5):
            g = random_graph(rng, connected=True)
            x = rng.standard_normal(g.n)
            p = PermutationMap.random(g.n, rng)
            params = ActivationParams(kind, beta=0.8, h_sigma=rng.uniform(-1, 1, 2),
                                      gamma=0.3)
            if kind.startswith("localized"):
                out = localized_activation(g, x, params, khop_sets(g, 2))
                out_p = localized_activation(permute(g, p), permute_signal(x, p),
                                             params, khop_sets(permute(g, p), 2))
            elif kind == "ga_kernel":
                out = ga_kernel_activation(g, x, params)
                out_p = ga_kernel_activation(permute(g, p), permute_signal(x, p), params)
            else:
                out = ga_localized_activation(g, x, params)
                out_p = ga_localized_activation(permute(g, p), permute_signal(x, p), params)
            # localized kinds select among raw values: exact under relabeling.
            # The shifted kinds recompute S^k x with reordered per-row sums,
            # so they match to float reassociation error only.
            tol = 0.0 if kind.startswith("localized") else 1e-12
            assert np.max(np.abs(out_p - permute_signal(out, p))) <= tol

    def test_empty_neighborhood_conventions(self):
        # isolate node 2 by dropping its only edge
        g = graph_from_edges(3, [(0, 1), (1, 2)], [1.0, 1.0])
        g2 = sample_link_loss(g, 0.0, seed=0)
        lone = graph_from_edges(3, [(0, 1)])
        x = np.array([1.0, 2.0, 5.0])
        assert shifted_localized_operator(lone, x, 1, "max")[2] == 0.0
        assert shifted_localized_operator(lone, x, 1, "median")[2] == 0.0
        assert kernel_operator(lone, x, 1, 0.5)[2] == 1.0
        assert g2.m == 2  # sanity: drop_prob 0 kept everything

    def test_localized_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            g = random_graph(rng)
            W = oracles.dense_matrix(g)
            x = rng.standard_normal(g.n)
            beta = float(rng.uniform(-1, 1))
            h = rng.uniform(-1, 1, size=2)
            hoods = khop_sets(g, 2)
            for kind, name in (("localized_max", "max"), ("localized_median", "median")):
                got = localized_activation(g, x, ActivationParams(kind, beta, h), hoods)
                want = oracles.brute_localized(W, x, beta, h, name)
                assert np.array_equal(got, want)

    def test_ga_matches_brute_force(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            g = random_graph(rng)
            W = oracles.dense_matrix(g)
            z = rng.standard_normal(g.n)
            beta = float(rng.uniform(-1, 1))
            h = rng.uniform(-1, 1, size=2)
            for kind, name in (("ga_max", "max"), ("ga_median", "median")):
                got = ga_localized_activation(g, z, ActivationParams(kind, beta, h))
                want = oracles.brute_ga_localized(W, z, beta, h, name)
                assert np.array_equal(got, want)
            got = ga_kernel_activation(g, z, ActivationParams("ga_kernel", beta, h, 0.4))
            want = oracles.brute_ga_kernel(W, z, beta, h, 0.4)
            assert np.max(np.abs(got - want)) <= 1e-12

    def test_params_validation(self):
        with pytest.raises(ValueError):
            ActivationParams("relu", h_sigma=[1.0])
        with pytest.raises(ValueError):
            ActivationParams("ga_max", h_sigma=[])
        with pytest.raises(ValueError):
            ActivationParams("ga_kernel", h_sigma=[1.0], gamma=0.0)
        with pytest.raises(ValueError):
            ActivationParams("squish", h_sigma=[1.0])
