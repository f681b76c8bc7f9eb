"""Monte Carlo forward-backward simulation with the finite-difference decoupling field."""

import csv
import math

import numpy as np
import pytest

from bsdelab.coefficients import make_coefficients
from bsdelab.errors import RangeError, RegionEscapeError
from bsdelab.fbsde_mc import (
    BLOCK,
    MAIN_STREAM,
    McConfig,
    decoupling_family,
    girsanov_reweighting,
    normals,
    residual_convergence,
    simulate_fbsde,
)
from bsdelab.pde_oracle import Grid, solve_fd_family


@pytest.fixture(scope="module")
def burgers():
    coeffs = make_coefficients("burgers", "sech")
    return coeffs, decoupling_family(coeffs, 0.25, 8, 0.5, dx=0.02)


def test_config_validation():
    with pytest.raises(ValueError):
        McConfig(0, 0.1)
    with pytest.raises(ValueError):
        McConfig(10, 0.1, T=0.25).n_steps
    assert McConfig(10, 0.125, d=4).start == pytest.approx([0.25] * 4)


def test_normals_are_keyed():
    a = normals(3, MAIN_STREAM, 2, 0, 5, 1)
    assert np.array_equal(a, normals(3, MAIN_STREAM, 2, 0, 5, 1))
    assert not np.array_equal(a, normals(3, MAIN_STREAM, 3, 0, 5, 1))
    assert not np.array_equal(a, normals(4, MAIN_STREAM, 2, 0, 5, 1))


def test_single_path_by_hand(burgers):
    coeffs, fam = burgers
    cfg = McConfig(1, 0.0625, seed=9, x=0.5, T=0.25)
    stats = simulate_fbsde(coeffs, fam, cfg)
    x = 0.5
    y = fam.frame_at(0.25)(np.array([x]))[0, 0]
    for k in range(4):
        frame = fam.frame_at(0.25 - k * 0.0625).with_gradient()
        u, du = frame(np.array([x]))[0, 0], frame.grad_at(np.array([x]))[0, 0]
        dB = math.sqrt(0.0625) * normals(9, MAIN_STREAM, k, 0, 1, 1)[0, 0]
        y += du * dB
        x += -u * 0.0625 + dB
    assert stats.terminal_x_mean == pytest.approx(x, abs=1e-14)
    assert stats.residual_mean == pytest.approx(abs(y - 1 / math.cosh(x)), abs=1e-14)


def test_deterministic(burgers):
    coeffs, fam = burgers
    cfg = McConfig(500, 0.125, seed=1)
    assert simulate_fbsde(coeffs, fam, cfg) == simulate_fbsde(coeffs, fam, cfg)


def test_leading_paths_independent_of_m(burgers, tmp_path):
    coeffs, fam = burgers
    small, large = tmp_path / "a.csv", tmp_path / "b.csv"
    simulate_fbsde(coeffs, fam, McConfig(5, 0.125, seed=2), dump_csv=small, dump_paths=3)
    simulate_fbsde(coeffs, fam, McConfig(BLOCK + 10, 0.125, seed=2), dump_csv=large, dump_paths=3)
    assert small.read_text() == large.read_text()


def test_dump_csv(burgers, tmp_path):
    coeffs, fam = burgers
    path = tmp_path / "paths.csv"
    simulate_fbsde(coeffs, fam, McConfig(20, 0.125), dump_csv=path, dump_paths=3)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["path", "t", "x1", "y1"]
    assert len(rows) == 1 + 3 * 3


def test_missing_snapshot(burgers):
    coeffs, fam = burgers
    with pytest.raises(RangeError):
        simulate_fbsde(coeffs, fam, McConfig(10, 0.25 / 3))


def test_narrow_grid_rejected():
    coeffs = make_coefficients("burgers", "sech")
    fam = solve_fd_family(coeffs, Grid.from_spacing(-1, 2, 0.05), [0.0, 0.125, 0.25])
    with pytest.raises(RangeError):
        simulate_fbsde(coeffs, fam, McConfig(10, 0.125))


def test_escape_detected():
    # a strong constant drift carries about 0.1% of paths past the left edge at 6 sigma
    coeffs = make_coefficients("constant", "sech", f_params={"c": 6.0})
    fam = solve_fd_family(coeffs, Grid.from_spacing(-2.5, 3.5, 0.05), [0.0, 0.125, 0.25], dt_pde=1e-3)
    with pytest.raises(RegionEscapeError) as info:
        simulate_fbsde(coeffs, fam, McConfig(20000, 0.125, seed=0))
    assert 0 < info.value.escape_rate < 1e-2


def test_residual_shrinks_like_sqrt_dt():
    coeffs = make_coefficients("burgers", "sech")
    res = residual_convergence(coeffs, McConfig(20000, 0.25 / 8, seed=4), halvings=2)
    assert all(0.6 <= r <= 0.8 for r in res["ratios"])


@pytest.mark.parametrize("d", [1, 3])
def test_reweighting(d):
    coeffs = make_coefficients("burgers", "sech")
    fam = decoupling_family(coeffs, 0.25, 8, 0.5)
    check = girsanov_reweighting(coeffs, fam, McConfig(50000, 0.25 / 8, seed=6, d=d))
    assert check.passed
