"""Gradient estimates: closed forms, scope and numerical checks of both sides."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsdelab.coefficients import make_coefficients
from bsdelab.errors import ScopeError
from bsdelab.estimates import (
    CSV_COLUMNS,
    EstimateContext,
    EstimateReport,
    binomial_moment,
    density_moment_bound,
    estimate_one,
    estimate_two,
    gradient_corollary,
    max_f_squared,
    moment_exponent,
    run_suite,
    write_reports_csv,
)


def test_moment_exponent():
    assert moment_exponent(1.0) == pytest.approx(2.0)
    assert moment_exponent(1.5) == pytest.approx(4.0)
    assert moment_exponent(1.9) == pytest.approx(20.0)


@pytest.mark.parametrize("p", [0.5, 2.0, 2.5])
def test_p_out_of_range(p):
    with pytest.raises(ValueError):
        density_moment_bound(make_coefficients("burgers"), 0.05, p)


def test_scope_rejects_driver():
    coeffs = make_coefficients("burgers", g="decay")
    with pytest.raises(ScopeError):
        estimate_one(coeffs, 0.0, 0.05, 0.05, 1.5)
    with pytest.raises(ScopeError):
        EstimateContext(coeffs, 0.0, 0.05)


def test_max_f_squared():
    assert max_f_squared(make_coefficients("burgers", u0_params={"amplitude": 1.5})) == pytest.approx(2.25)
    # on the unit disc the linear form 0.6 y1 + 0.4 y2 peaks at |w|^2
    assert max_f_squared(make_coefficients("two_component_mix")) == pytest.approx(0.52, rel=1e-5)


class TestBinomialMoment:
    @given(st.floats(-2, 2), st.integers(1, 10), st.floats(1.0, 1.95))
    @settings(max_examples=30, deadline=None)
    def test_matches_tree_moment_for_constant_drift(self, c, N, p):
        coeffs = make_coefficients("constant", "neg_tanh", f_params={"c": c})
        T = 0.04
        q = moment_exponent(p)
        ctx = EstimateContext(coeffs, 0.0, T, N=N)
        h = math.sqrt(T / N)
        for k in (0, N // 2, N):
            assert ctx.density_moment(q, k) == pytest.approx(binomial_moment(c, h, q, k), rel=1e-12)

    @pytest.mark.parametrize("p", [1.0, 1.5, 1.9])
    def test_defect_is_first_order(self, p):
        # horizon chosen so the limiting exponent is 1/2 for every p
        c = 1.0
        T = 0.5 * (2 - p) ** 2 / p
        q = moment_exponent(p)
        limit = math.exp(0.5)
        defects = [abs(binomial_moment(c, math.sqrt(T / N), q, N) - limit) for N in (32, 64, 128)]
        for a, b in zip(defects, defects[1:]):
            assert 1.6 <= a / b <= 2.4


class TestReports:
    def test_pass_flag_uses_slack(self):
        assert EstimateReport("x", 1.05, 1.0, 0.1).passed
        assert not EstimateReport("x", 1.2, 1.0, 0.1).passed
        assert json.loads(EstimateReport("x", 1.0, 2.0, 0.0).to_json())["pass"] is True

    def test_csv(self, tmp_path):
        path = tmp_path / "e.csv"
        write_reports_csv([EstimateReport("x", 1.0, 2.0, 0.1, 0, {"x": 0.5, "p": 1.5})], path)
        lines = path.read_text().splitlines()
        assert lines[0].split(",") == CSV_COLUMNS
        assert len(lines) == 2


@pytest.fixture(scope="module")
def burgers_ctx():
    coeffs = make_coefficients("burgers", "sech")
    return EstimateContext(coeffs, 0.3, 0.06, N=12)


class TestBurgersEstimates:
    @pytest.mark.parametrize("p", [1.0, 1.5, 1.9])
    def test_estimate_one(self, burgers_ctx, p):
        reports = estimate_one(burgers_ctx.coeffs, 0.3, 0.06, 0.03, p, ctx=burgers_ctx)
        assert all(r.passed for r in reports)

    def test_estimate_two(self, burgers_ctx):
        (r,) = estimate_two(burgers_ctx.coeffs, 0.3, 0.06, ctx=burgers_ctx)
        assert r.passed
        assert set(r.inputs["rhs_by_time"]) == {"1dt", "2dt", "4dt"}

    @pytest.mark.parametrize("p", [1.0, 1.5, 1.9])
    def test_density_and_corollary(self, burgers_ctx, p):
        assert density_moment_bound(burgers_ctx.coeffs, 0.03, p, x=0.3, T=0.06, ctx=burgers_ctx).passed
        assert all(r.passed for r in gradient_corollary(burgers_ctx.coeffs, 0.3, 0.06, 0.03, p, ctx=burgers_ctx))

    def test_context_mismatch(self, burgers_ctx):
        with pytest.raises(ValueError):
            estimate_two(burgers_ctx.coeffs, 0.4, 0.06, ctx=burgers_ctx)

    def test_non_tree_time(self, burgers_ctx):
        with pytest.raises(ValueError):
            estimate_one(burgers_ctx.coeffs, 0.3, 0.06, 0.031, 1.5, ctx=burgers_ctx)


def test_suite_on_system():
    coeffs = make_coefficients("two_component_mix")
    reports = run_suite(coeffs, 0.2, 0.05, 0.025, [1.5], N=10)
    assert {r.name for r in reports} == {"estimate_one", "estimate_two", "density_moment_bound", "gradient_corollary"}
    assert all(r.passed for r in reports)
