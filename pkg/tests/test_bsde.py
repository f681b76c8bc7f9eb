"""Backward equations on the tree and their transformation under a change of measure."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsdelab.bsde import solve_driver_bsde, solve_martingale_bsde, transform_bsde
from bsdelab.checks import random_convection, random_driver, transform_suite
from bsdelab.errors import StabilityError
from bsdelab.wiener_tree import TerminalVariable, build_tree, cond_exp, martingale_residual


class TestMartingaleBsde:
    def test_single_step_by_hand(self):
        tree = build_tree(1, 4.0)  # h = 2
        sol = solve_martingale_bsde(TerminalVariable(tree, [5.0, 1.0]))
        assert sol.Y[0][0, 0] == pytest.approx(3.0)
        assert sol.Z[0][0, 0] == pytest.approx(1.0)

    def test_brownian_terminal(self):
        tree = build_tree(5, 1.0)
        sol = solve_martingale_bsde(TerminalVariable(tree, tree.B[5]))
        assert all(np.allclose(z, 1.0) for z in sol.Z.values)
        assert sol.Y[0][0, 0] == pytest.approx(0.0, abs=1e-15)


class TestDriverBsde:
    @pytest.mark.parametrize("c", [-1.0, 0.3, 2.0])
    def test_constant_driver(self, c):
        rng = np.random.default_rng(0)
        tree = build_tree(6, 0.5)
        xi = TerminalVariable(tree, rng.normal(size=(64, 1)))
        sol = solve_driver_bsde(xi, lambda t, y, z: np.full_like(y, c), 0.0)
        for k in range(7):
            assert np.allclose(sol.Y[k], cond_exp(xi, k) + c * (6 - k) * tree.dt)

    def test_linear_decay_closed_form(self):
        # explicit step Y_k = (1 - dt) E[Y_{k+1}] for g = -y
        tree = build_tree(8, 0.5)
        sol = solve_driver_bsde(TerminalVariable(tree, np.ones(256)), lambda t, y, z: -y, 1.0)
        for k in range(9):
            assert np.allclose(sol.Y[k], (1 - tree.dt) ** (8 - k))
        assert all(np.all(z == 0) for z in sol.Z.values)

    def test_time_dependent_driver(self):
        tree = build_tree(4, 0.8)
        sol = solve_driver_bsde(TerminalVariable(tree, np.zeros(16)), lambda t, y, z: np.full_like(y, t), 0.0)
        expected = sum(tree.time(j) for j in range(4)) * tree.dt
        assert sol.Y[0][0, 0] == pytest.approx(expected)

    def test_stability_guard(self):
        tree = build_tree(4, 2.0)
        with pytest.raises(StabilityError):
            solve_driver_bsde(TerminalVariable(tree, np.zeros(16)), lambda t, y, z: -y, 0.5)

    def test_none_driver_is_martingale(self):
        tree = build_tree(3, 1.0)
        xi = TerminalVariable(tree, np.arange(8.0))
        a, b = solve_driver_bsde(xi, None), solve_martingale_bsde(xi)
        assert all(np.array_equal(x, y) for x, y in zip(a.Y.values, b.Y.values))

    @given(st.integers(1, 10), st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_s_is_martingale(self, N, seed):
        rng = np.random.default_rng(seed)
        tree = build_tree(N, 1.0)
        g, lip = random_driver(rng, 2)
        sol = solve_driver_bsde(TerminalVariable(tree, rng.normal(size=(tree.n_leaves, 2))), g, lip)
        assert martingale_residual(sol.S) <= 1e-12


class TestTransform:
    def test_two_step_burgers_by_hand(self):
        # f(y, z) = y; xi = B_T. Then Y_k = B_k, Z = 1, f_k = B_k and the
        # compensated martingale is B_k - sum_{j<k} B_j dt.
        tree = build_tree(2, 1.0)
        sol = solve_martingale_bsde(TerminalVariable(tree, tree.B[2]))
        res = transform_bsde(sol, lambda y, z: y[..., 0])
        dt, h = tree.dt, tree.h
        assert res.fvals[0][:, 0] == pytest.approx([0.0])
        assert res.fvals[1][:, 0] == pytest.approx([h, -h])
        S = res.solution.S
        assert S[1][:, 0] == pytest.approx([h, -h])
        assert S[2][:, 0] == pytest.approx([2 * h - h * dt, -h * dt, h * dt, -2 * h + h * dt])
        assert all(np.allclose(z, 1.0) for z in res.solution.Z.values)
        assert res.residual <= 1e-15
        assert res.q_martingale_residual <= 1e-15

    @given(st.integers(1, 10), st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_transform_residual(self, N, seed):
        rng = np.random.default_rng(seed)
        tree = build_tree(N, float(rng.uniform(0.05, 1.0)))
        g, lip = random_driver(rng, 1)
        sol = solve_driver_bsde(TerminalVariable(tree, rng.normal(size=(tree.n_leaves, 1))), g, lip)
        res = transform_bsde(sol, random_convection(rng, tree))
        assert res.residual <= 1e-12
        assert res.q_martingale_residual <= 1e-12

    def test_density_unchanged(self):
        rng = np.random.default_rng(4)
        tree = build_tree(7, 0.5)
        sol = solve_martingale_bsde(TerminalVariable(tree, rng.normal(size=(128, 1))))
        res = transform_bsde(sol, random_convection(rng, tree))
        assert all(np.allclose(a, b, atol=1e-13) for a, b in zip(sol.Z.values, res.solution.Z.values))

    def test_suite_100_instances(self):
        res = transform_suite(100, seed=3)
        assert res.max_residual <= 1e-12
