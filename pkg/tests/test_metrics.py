import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from momentstein import _rng
from momentstein.errors import SizeOverflowError
from momentstein.measures import empirical, make_measure, standard_gaussian
from momentstein.metrics import (
    stein_discrepancy_upper, w1d_exact, wp_bound_check, wp_entropic, wp_exact_lp, wp_to_gaussian,
)
from momentstein.moment_map import closed_form_map
from momentstein.stein import kernel_from_moment_map

# frozen reference values from independent quadrature of the quantile coupling
W2_UNIF3_GAUSS = 0.21351803763114172
W2_EXPO_GAUSS = 0.4400061690925195


def _gauss(var):
    return make_measure({"family": "gaussian", "dim": 1, "params": {"variance": var}})


@pytest.mark.parametrize("var", [0.25, 1.0, 1.44, 4.0])
def test_discrepancy_gaussian(var):
    assert stein_discrepancy_upper(closed_form_map(_gauss(var))) == pytest.approx(abs(var - 1), abs=1e-6)


def test_discrepancy_uniform(closed_maps, grid_maps):
    # S^2 = E[((3 - Y^2)/2 - 1)^2] = 1/5 for Y uniform on [-sqrt 3, sqrt 3]
    assert stein_discrepancy_upper(closed_maps["unif3"]) == pytest.approx(1 / math.sqrt(5), abs=1e-10)
    assert stein_discrepancy_upper(grid_maps["unif3"]) == pytest.approx(1 / math.sqrt(5), abs=1e-6)


def test_discrepancy_product_adds_in_squares(closed_maps):
    box = make_measure({"family": "uniform_box", "dim": 2, "params": {"lo": -math.sqrt(3), "hi": math.sqrt(3)}})
    assert stein_discrepancy_upper(closed_form_map(box)) == pytest.approx(math.sqrt(0.4), abs=1e-10)


def test_w2_analytic_oracles(measures):
    g = standard_gaussian(1)
    assert w1d_exact(measures["unif3"], g).value == pytest.approx(W2_UNIF3_GAUSS, abs=1e-10)
    assert w1d_exact(measures["expo"], g).value == pytest.approx(W2_EXPO_GAUSS, abs=1e-10)
    assert w1d_exact(g, measures["expo"]).value == pytest.approx(W2_EXPO_GAUSS, abs=1e-10)
    # W_2(N(0, s^2), N(0, 1)) = |s - 1|
    assert w1d_exact(measures["gauss144"], g).value == pytest.approx(0.2, abs=1e-10)


def test_w1_gaussian_scale():
    # W_1(N(0, 4), N(0, 1)) = E|Z| = sqrt(2/pi)
    assert w1d_exact(_gauss(4.0), standard_gaussian(1), p=1).value == pytest.approx(math.sqrt(2 / math.pi), abs=1e-10)


def test_analytic_vs_cloud(measures):
    u = _rng.uniforms(0, 5000, 1)[:, 0] * 2 * math.sqrt(3) - math.sqrt(3)
    v = w1d_exact(measures["unif3"], u).value
    assert 0 < v < 0.05


@given(st.integers(2, 40), st.integers(0, 2**31))
def test_lp_matches_quantile_in_1d(n, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=n), 1.3 * rng.normal(size=n) + 0.2
    assert wp_exact_lp(x, y).value == pytest.approx(w1d_exact(x, y).value, abs=1e-9)


def test_weighted_lp_matches_quantile():
    a = (np.array([0.0, 1.0, 3.0]), np.array([0.2, 0.3, 0.5]))
    b = (np.array([0.5, 2.0]), np.array([0.6, 0.4]))
    assert wp_exact_lp(a, b).value == pytest.approx(w1d_exact(a, b).value, abs=1e-9)


def test_single_atoms():
    assert wp_exact_lp(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]]), p=3).value == pytest.approx(5.0)


def test_identical_inputs_give_zero():
    x = _rng.normals(1, 50, 2)
    assert wp_exact_lp(x, x).value == 0.0
    assert w1d_exact(x[:, 0], x[:, 0]).value == 0.0


@settings(max_examples=15)
@given(st.integers(0, 2**31))
def test_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.normal(size=(12, 2)) * s for s in (1.0, 1.5, 0.7))
    ab, bc, ac = wp_exact_lp(a, b).value, wp_exact_lp(b, c).value, wp_exact_lp(a, c).value
    assert ac <= ab + bc + 1e-12


def test_lp_size_guard():
    big = np.zeros((1001, 1))
    with pytest.raises(SizeOverflowError):
        wp_exact_lp(big, big)


def test_bad_order():
    with pytest.raises(ValueError):
        w1d_exact(np.zeros(3), np.ones(3), p=0.5)


def test_entropic_close_to_exact():
    x = _rng.normals(1, 200, 1)
    y = _rng.normals(2, 200, 1) * 1.3
    exact = wp_exact_lp(x, y).value
    e = wp_entropic(x, y)
    assert e.metadata["converged"]
    assert abs(e.value - exact) <= 3 * e.error_estimate


def test_entropic_2d():
    x = _rng.normals(3, 150, 2)
    y = _rng.normals(4, 150, 2) + 0.5
    e = wp_entropic(x, y, threads=2)
    assert abs(e.value - wp_exact_lp(x, y).value) <= 3 * e.error_estimate


def test_entropic_identical_clouds():
    x = _rng.normals(5, 100, 2)
    assert wp_entropic(x, x).value <= 1e-6


def test_entropic_rejects_bad_reg():
    with pytest.raises(ValueError):
        wp_entropic(np.zeros(3), np.ones(3), reg=-1.0)


def test_wp_to_gaussian_methods(measures):
    X = measures["unif3"].sample(4000, 3)
    r = wp_to_gaussian(X, seed=5)
    assert r.method == "quantile_1d" and r.error_estimate > 0
    assert abs(r.value - W2_UNIF3_GAUSS) < 4 * r.error_estimate + 0.02
    # the Gaussian itself is at noise level
    z = wp_to_gaussian(_rng.normals(9, 4000, 1), seed=5)
    assert z.value < 0.1
    assert wp_to_gaussian(X, seed=5).value == r.value


def test_product_marginal_for_product_laws():
    box = make_measure({"family": "uniform_box", "dim": 2, "params": {"lo": -math.sqrt(3), "hi": math.sqrt(3)}})
    X = box.sample(500, 2)
    lp = wp_to_gaussian(X, seed=1, method="exact_lp")
    pm = wp_to_gaussian(X, seed=1, method="product_marginal")
    assert pm.method == "product_marginal"
    # every coupling projects to couplings of the marginals, so the marginal sum is a lower bound;
    # for product laws the gap is sampling noise only
    assert pm.value <= lp.value + 1e-12
    assert lp.value - pm.value < 3 * lp.error_estimate


@pytest.mark.parametrize("sigma", [0.5, 0.8, 1.2, 2.0])
def test_bound_ratio_gaussian(sigma):
    mu = _gauss(sigma**2)
    b = wp_bound_check(kernel_from_moment_map(closed_form_map(mu)), mu)
    assert b.holds
    assert b.ratio == pytest.approx(1 / (sigma + 1), rel=1e-8)


def test_bound_example_reproduced(measures):
    mu = measures["gauss144"]
    b = wp_bound_check(kernel_from_moment_map(closed_form_map(mu)), mu)
    assert b.lhs == pytest.approx(0.2, abs=1e-10)
    assert b.rhs == pytest.approx(0.44, abs=1e-10)


@pytest.mark.parametrize("key", ["unif", "unif3", "expo", "gauss4", "quartic"])
def test_bound_holds_on_families(measures, grid_maps, key):
    mu = measures[key]
    b = wp_bound_check(kernel_from_moment_map(grid_maps[key]), mu)
    assert b.holds and b.lhs <= b.rhs


def test_bound_other_p_reports_ratio_only(closed_maps, measures):
    b = wp_bound_check(kernel_from_moment_map(closed_maps["unif3"]), measures["unif3"], p=3)
    assert b.holds is None and b.ratio > 0


def test_discrepancy_two_point_map():
    # Hess phi = 0 almost everywhere for max-affine maps
    phi = closed_form_map(empirical([[-1.0], [1.0]]))
    assert stein_discrepancy_upper(phi) == 1.0
