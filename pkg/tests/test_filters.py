import numpy as np
import pytest

from graphadapt import (
    FilterBank,
    FilterTaps,
    PermutationMap,
    SHIFT_COUNTER,
    filter_bank_apply,
    graph_convolution,
    permute,
    permute_signal,
)
from conftest import random_graph
import oracles


class TestGraphConvolution:
    def test_order_zero_identity(self, path3):
        x = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(graph_convolution(path3, x, FilterTaps([1.0])), x)

    def test_pure_shift_taps(self, path3):
        y = graph_convolution(path3, [1.0, 2.0, 3.0], FilterTaps([0.0, 1.0]))
        assert np.array_equal(y, [2.0, 4.0, 2.0])

    def test_identity_plus_shift(self, path3):
        y = graph_convolution(path3, [1.0, 2.0, 3.0], FilterTaps([1.0, 1.0]))
        assert np.array_equal(y, [3.0, 6.0, 5.0])

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            g = random_graph(rng)
            W = oracles.dense_matrix(g)
            x = rng.standard_normal(g.n)
            h = rng.standard_normal(int(rng.integers(1, 6)))
            got = graph_convolution(g, x, FilterTaps(h))
            want = oracles.dense_convolution(W, x, h)
            assert np.max(np.abs(got - want)) <= 1e-12 * max(1.0, np.max(np.abs(want)))

    def test_linearity(self):
        rng = np.random.default_rng(1)
        g = random_graph(rng)
        h = FilterTaps(rng.standard_normal(4))
        x, y = rng.standard_normal((2, g.n))
        a, b = 0.7, -1.3
        lhs = graph_convolution(g, a * x + b * y, h)
        rhs = a * graph_convolution(g, x, h) + b * graph_convolution(g, y, h)
        scale = max(1.0, float(np.max(np.abs(rhs))))
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            g = random_graph(rng)
            h = FilterTaps(rng.standard_normal(4))
            x = rng.standard_normal(g.n)
            p = PermutationMap.random(g.n, rng)
            lhs = graph_convolution(permute(g, p), permute_signal(x, p), h)
            rhs = permute_signal(graph_convolution(g, x, h), p)
            assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(rhs)))


class TestFilterBank:
    def test_single_feature_reduces_to_convolution(self, path3):
        h = np.array([0.5, -1.0, 2.0])
        bank = FilterBank(h[None, None, :])
        x = np.array([1.0, 2.0, 3.0])
        got = filter_bank_apply(path3, x[:, None], bank)
        assert np.array_equal(got[:, 0], graph_convolution(path3, x, FilterTaps(h)))

    def test_zero_bank(self, path3):
        bank = FilterBank(np.zeros((3, 2, 2)))
        out = filter_bank_apply(path3, np.ones((3, 2)), bank)
        assert np.array_equal(out, np.zeros((3, 3)))

    def test_additivity_over_input_features(self, path3):
        bank = FilterBank(np.ones((1, 2, 1)))
        X = np.array([[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]])
        out = filter_bank_apply(path3, X, bank)
        assert np.array_equal(out[:, 0], X[:, 0] + X[:, 1])

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            g = random_graph(rng)
            W = oracles.dense_matrix(g)
            f_in, f_out, order = rng.integers(1, 4), rng.integers(1, 4), rng.integers(0, 4)
            coeffs = rng.standard_normal((f_out, f_in, order + 1))
            X = rng.standard_normal((g.n, f_in))
            got = filter_bank_apply(g, X, FilterBank(coeffs))
            want = oracles.dense_bank(W, X, coeffs)
            assert np.max(np.abs(got - want)) <= 1e-12 * max(1.0, np.max(np.abs(want)))

    def test_shift_count_accounting(self):
        rng = np.random.default_rng(4)
        g = random_graph(rng)
        f_in, order = 3, 4
        bank = FilterBank(rng.standard_normal((2, f_in, order + 1)))
        SHIFT_COUNTER.reset()
        filter_bank_apply(g, rng.standard_normal((g.n, f_in)), bank)
        assert SHIFT_COUNTER.count == order * f_in

    def test_shape_mismatch(self, path3):
        bank = FilterBank(np.ones((1, 2, 1)))
        with pytest.raises(ValueError):
            filter_bank_apply(path3, np.ones((3, 3)), bank)

    def test_from_taps_uniform_order(self):
        taps = [[FilterTaps([1.0, 2.0]), FilterTaps([0.0, 1.0])]]
        bank = FilterBank.from_taps(taps)
        assert bank.f_out == 1 and bank.f_in == 2 and bank.order == 1
        with pytest.raises(ValueError):
            FilterBank.from_taps([[FilterTaps([1.0]), FilterTaps([1.0, 2.0])]])
