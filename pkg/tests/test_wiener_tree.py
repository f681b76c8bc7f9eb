"""Discrete Wiener space: tree layout, conditional expectations, densities, brackets."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsdelab.errors import CapacityError, MartingaleError, TreeMismatchError
from bsdelab.wiener_tree import (
    AdaptedProcess,
    Measure,
    TerminalVariable,
    bracket,
    build_tree,
    cond_exp,
    cond_exp_all,
    expectation,
    ito_sum,
    martingale_density,
)


def paths(N):
    """All up/down sign sequences in leaf order (first step is the most significant bit)."""
    return list(itertools.product((1, -1), repeat=N))


def random_martingale(tree, rng, m=1):
    return cond_exp_all(TerminalVariable(tree, rng.normal(size=(tree.n_leaves, m))))


class TestBuildTree:
    def test_single_step(self):
        tree = build_tree(1, 1.0)
        assert tree.h == pytest.approx(1.0)
        assert tree.B[1] == pytest.approx([1.0, -1.0])

    def test_two_steps(self):
        tree = build_tree(2, 1.0)
        h = math.sqrt(0.5)
        assert tree.B[2] == pytest.approx([2 * h, 0.0, 0.0, -2 * h])

    def test_leaf_order_matches_enumeration(self):
        tree = build_tree(4, 0.7)
        expected = [tree.h * sum(p) for p in paths(4)]
        assert tree.B[4] == pytest.approx(expected, abs=1e-15)

    @pytest.mark.parametrize("N", [0, 25])
    def test_capacity(self, N):
        with pytest.raises((CapacityError, ValueError)):
            build_tree(N, 1.0)

    def test_depth_25_is_capacity_error(self):
        with pytest.raises(CapacityError):
            build_tree(25, 1.0)

    def test_bad_horizon(self):
        with pytest.raises(ValueError):
            build_tree(3, 0.0)

    @given(st.integers(1, 12), st.floats(0.01, 5.0))
    @settings(max_examples=30, deadline=None)
    def test_increments_are_plus_minus_h(self, N, T):
        tree = build_tree(N, T)
        assert tree.B[0] == pytest.approx([0.0])
        for k in range(N):
            assert len(tree.B[k + 1]) == 2 ** (k + 1)
            step = tree.B[k + 1] - np.repeat(tree.B[k], 2)
            assert np.allclose(np.abs(step), tree.h, rtol=0, atol=1e-12)
            assert np.all(step[0::2] > 0) and np.all(step[1::2] < 0)


class TestCondExp:
    def test_two_leaf_average(self):
        tree = build_tree(1, 1.0)
        assert cond_exp(TerminalVariable(tree, [0.0, 2.0]), 0)[0, 0] == pytest.approx(1.0)

    def test_tilted_average(self):
        # the up child is stored first; value 2 on the up branch, 0 on the down branch
        tree = build_tree(1, 1.0)
        q = Measure(tree, (np.array([0.75]),), "tilted")
        assert cond_exp(TerminalVariable(tree, [2.0, 0.0]), 0, q)[0, 0] == pytest.approx(1.5)
        assert cond_exp(TerminalVariable(tree, [0.0, 2.0]), 0, q)[0, 0] == pytest.approx(0.5)

    def test_level_N_is_identity(self):
        tree = build_tree(5, 1.0)
        x = np.random.default_rng(0).normal(size=(32, 2))
        assert np.array_equal(cond_exp(TerminalVariable(tree, x), 5), x)

    def test_subtree_mean(self):
        tree = build_tree(3, 1.0)
        x = np.arange(8.0)
        assert cond_exp(TerminalVariable(tree, x), 1)[:, 0] == pytest.approx([1.5, 5.5])

    def test_tree_mismatch(self):
        a, b = build_tree(3, 1.0), build_tree(3, 2.0)
        with pytest.raises(TreeMismatchError):
            cond_exp(TerminalVariable(a, np.zeros(8)), 0, Measure.symmetric(b))

    @given(st.integers(1, 10), st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_tower_property(self, N, seed):
        rng = np.random.default_rng(seed)
        tree = build_tree(N, 1.0)
        X = TerminalVariable(tree, rng.normal(size=(tree.n_leaves, 2)))
        k = int(rng.integers(0, N + 1))
        j = int(rng.integers(0, k + 1))
        inner = TerminalVariable(tree, np.repeat(cond_exp(X, k), 2 ** (N - k), axis=0))
        assert np.array_equal(cond_exp(inner, j), cond_exp(X, j))

    @given(st.integers(1, 10), st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_componentwise_maximum_principle(self, N, seed):
        rng = np.random.default_rng(seed)
        tree = build_tree(N, 1.0)
        X = TerminalVariable(tree, rng.normal(size=(tree.n_leaves, 3)) * [1, 10, 0.1])
        bound = np.max(np.abs(X.values), axis=0)
        for k in range(N + 1):
            assert np.all(np.abs(cond_exp(X, k)) <= bound)


class TestMartingaleDensity:
    def test_brownian_density_is_one(self):
        tree = build_tree(6, 1.0)
        Z = martingale_density(tree.brownian())
        assert all(np.allclose(z, 1.0) for z in Z.values)

    def test_square_enumeration(self):
        # S_k = E[B_T^2 | F_k] = B_k^2 + (N - k) dt; Z_k = 2 B_k by hand on the N = 2 tree
        tree = build_tree(2, 1.0)
        h, dt = tree.h, tree.dt
        leaves = [(h * sum(p)) ** 2 for p in paths(2)]
        S = cond_exp_all(TerminalVariable(tree, leaves))
        Z = martingale_density(S)
        assert S[1][:, 0] == pytest.approx([h**2 + dt, h**2 + dt])
        assert Z[0][0, 0] == pytest.approx(0.0, abs=1e-15)
        # level 1: up node B = h, leaves (2h)^2 and 0 -> Z = 4h^2 / 2h = 2h
        assert Z[1][:, 0] == pytest.approx([2 * h, -2 * h])

    def test_constant_has_zero_density(self):
        tree = build_tree(4, 1.0)
        S = cond_exp_all(TerminalVariable(tree, np.full(16, 3.0)))
        assert all(np.all(z == 0) for z in martingale_density(S).values)

    def test_non_martingale_rejected(self):
        tree = build_tree(3, 1.0)
        levels = tuple(np.full((2**k, 1), float(k)) for k in range(4))
        with pytest.raises(MartingaleError):
            martingale_density(AdaptedProcess(tree, levels))

    @given(st.integers(1, 10), st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_reconstruction(self, N, seed):
        tree = build_tree(N, 0.5)
        S = random_martingale(tree, np.random.default_rng(seed), m=2)
        rebuilt = ito_sum(martingale_density(S))
        for k in range(N + 1):
            assert np.allclose(rebuilt[k], S[k] - S[0], atol=1e-12)


class TestItoSum:
    def test_unit_integrand_gives_brownian(self):
        tree = build_tree(5, 2.0)
        Z = AdaptedProcess(tree, tuple(np.ones((2**k, 1)) for k in range(5)))
        I = ito_sum(Z)
        for k in range(6):
            assert np.allclose(I[k][:, 0], tree.B[k])

    def test_zero_integrand(self):
        tree = build_tree(4, 1.0)
        Z = AdaptedProcess(tree, tuple(np.zeros((2**k, 2)) for k in range(4)))
        assert all(np.all(v == 0) for v in ito_sum(Z).values)


class TestBracket:
    def test_brownian_bracket_is_time(self):
        tree = build_tree(6, 1.5)
        Bp = tree.brownian()
        br = bracket(Bp, Bp)
        for k in range(7):
            assert np.allclose(br[k], tree.time(k))

    def test_bracket_with_constant(self):
        tree = build_tree(4, 1.0)
        S = random_martingale(tree, np.random.default_rng(1))
        C = cond_exp_all(TerminalVariable(tree, np.ones(16)))
        assert all(np.all(v == 0) for v in bracket(S, C).values)

    def test_isometry_100_random_martingales(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(100):
            tree = build_tree(int(rng.integers(1, 13)), float(rng.uniform(0.1, 2.0)))
            S = random_martingale(tree, rng)
            lhs = expectation(TerminalVariable(tree, (S[tree.N] - S[0]) ** 2))
            rhs = expectation(bracket(S, S).terminal())
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        assert worst <= 1e-12

    def test_parallel_order_independence(self):
        # level reductions done in reversed pair order agree with the serial reference
        tree = build_tree(10, 1.0)
        rng = np.random.default_rng(5)
        X = TerminalVariable(tree, rng.normal(size=(1024, 1)))
        ref = expectation(X)
        alt = np.flip(X.values, axis=0).reshape(-1)
        for _ in range(10):
            alt = 0.5 * (alt[1::2] + alt[0::2])
        assert abs(alt[0] - ref[0]) <= 1e-13
