import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from momentstein.errors import (
    HyperplaneSupportError, NoClosedFormError, NotCenteredError, OutsideRangeError, SolverStalledError,
)
from momentstein.measures import empirical, make_measure, standard_gaussian
from momentstein.moment_map import (
    ClosedForm1D, FunctionMap1D, closed_form_map, compose_linear, legendre, load_map, map_from_dict,
    pushforward_check, smooth_max_affine, solve_1d, solve_map, solve_semidiscrete, verify_tke_residual,
)
from momentstein.stein import kernel_from_moment_map

from conftest import CLOSED, SPECS

X8 = np.linspace(-8, 8, 1601)


def _cube(x):
    return 2 * np.log(np.cosh(x / 2)) + math.log(4)


def test_cube_closed_form(measures):
    phi = closed_form_map(measures["unif"])
    assert np.allclose(phi.value(X8), _cube(X8), atol=1e-13)
    assert np.allclose(phi.gradient(X8)[:, 0], np.tanh(X8 / 2), atol=1e-15)
    assert phi.log_normalizer == pytest.approx(0.0, abs=1e-14)


def test_gaussian_closed_form_is_quadratic(measures):
    # N(0, s^2): phi(x) = s^2 x^2 / 2 - log s + log(2 pi)/2
    phi = closed_form_map(measures["gauss4"])
    expect = 2.0 * X8**2 - math.log(2.0) + 0.5 * math.log(2 * math.pi)
    assert np.allclose(phi.value(X8), expect, rtol=1e-13)
    assert np.allclose(phi.hessian(X8)[:, 0, 0], 4.0)


def test_exponential_closed_form_gradient_range(measures):
    phi = closed_form_map(measures["expo"])
    g = phi.gradient(X8)[:, 0]
    assert np.all(g > -1) and np.all(np.diff(g) > 0)


@pytest.mark.parametrize("key", CLOSED)
def test_tke_residual_closed_forms(closed_maps, measures, key):
    r = verify_tke_residual(closed_maps[key], measures[key], np.linspace(-6, 6, 241))
    assert r.sup < 1e-12
    assert r.flagged == 0


def test_tke_residual_detects_non_solution(measures):
    phi = FunctionMap1D(lambda x: x * x / 2 + 0.1 * x**4, lambda x: x + 0.4 * x**3, lambda x: 1 + 1.2 * x * x)
    r = verify_tke_residual(phi, measures["gauss1"], np.linspace(-3, 3, 61))
    assert r.sup > 1e-3


def test_no_closed_form_for_quartic(measures):
    with pytest.raises(NoClosedFormError):
        closed_form_map(measures["quartic"])


@pytest.mark.parametrize("key", CLOSED)
def test_solver_matches_closed_form(grid_maps, closed_maps, key):
    phi, ref = grid_maps[key], closed_maps[key]
    # beyond the solved window the grid map continues affinely; compare where e^{-phi} > e^{-40}
    v = ref.value(X8)
    x = X8[v - v.min() < 40]
    assert np.max(np.abs(phi.value(x) - ref.value(x))) < 1e-4
    assert np.max(np.abs(phi.gradient(x) - ref.gradient(x))) < 1e-5


def test_solver_gaussian_hessian_constant(grid_maps):
    h = grid_maps["gauss1"].hessian(np.linspace(-5, 5, 101))[:, 0, 0]
    assert np.max(np.abs(h - 1.0)) < 1e-5


@pytest.mark.parametrize("key", ["quartic", "quartic12"])
def test_solver_residual_and_convexity(grid_maps, measures, key):
    phi = grid_maps[key]
    r = verify_tke_residual(phi, measures[key], np.linspace(-4, 4, 161))
    assert r.sup < 1e-5
    x = np.linspace(-10, 10, 2001)
    assert np.all(np.diff(phi.gradient(x)[:, 0]) > 0)


def test_translation_changes_potential_not_kernel(grid_maps, measures):
    tol = 1e-6
    a = grid_maps["expo"]
    b = solve_1d(measures["expo"], gradient_at_origin=0.3, tol=tol)
    assert b.gradient(np.array([0.0]))[0, 0] == pytest.approx(0.3, abs=1e-10)
    y = np.linspace(-0.9, 4.0, 50)
    ka, kb = kernel_from_moment_map(a)(y), kernel_from_moment_map(b)(y)
    assert np.max(np.abs(ka - kb)) < 10 * tol


def test_solver_rejects_uncentered():
    mu = make_measure({"family": "gaussian", "dim": 1, "params": {"mean": 1.0}}, center=False)
    with pytest.raises(NotCenteredError):
        solve_1d(mu)


def test_solver_stalls_with_tiny_budget(measures):
    with pytest.raises(SolverStalledError):
        solve_1d(measures["quartic"], max_iter=3)


@given(st.floats(-0.95, 0.95))
def test_legendre_involution_cube(y):
    phi = ClosedForm1D("cube")
    v, x = legendre(phi, np.array([y]))
    assert phi.gradient(x)[0, 0] == pytest.approx(y, abs=1e-12)
    # Fenchel-Young equality
    assert v[0] + phi.value(x)[0] == pytest.approx(x[0, 0] * y, abs=1e-10)


def test_legendre_involution_grid(grid_maps):
    g = grid_maps["unif"]
    xs = np.linspace(-5, 5, 11)
    v, xx = g.legendre(g.gradient(xs)[:, 0])
    assert np.max(np.abs(xx[:, 0] - xs)) < 1e-7
    assert np.max(np.abs(v + g.value(xs) - xs * g.gradient(xs)[:, 0])) < 1e-9


def test_legendre_outside_range():
    with pytest.raises(OutsideRangeError):
        ClosedForm1D("cube").legendre(np.array([1.5]))


def test_two_point_semidiscrete():
    mu = empirical([[-1.0], [1.0]])
    phi = solve_semidiscrete(mu)
    assert np.allclose(phi.intercepts, -math.log(2), atol=1e-8)
    assert np.allclose(phi.cell_masses(), 0.5, atol=1e-8)
    # the exact solution is |x| up to the normalizing constant
    cf = closed_form_map(mu)
    assert np.allclose(cf.value(X8), np.abs(X8) + math.log(2))


def test_three_point_semidiscrete():
    mu = empirical([[-1.0], [0.0], [0.0], [1.0]])
    phi = solve_semidiscrete(mu)
    assert np.allclose(phi.cell_masses(), [0.25, 0.5, 0.25], atol=1e-8)
    assert phi.log_normalizer == pytest.approx(0.0, abs=1e-9)
    pf = pushforward_check(phi, mu, count=20_000)
    assert pf.statistic < 0.02


def test_semidiscrete_2d():
    mu = empirical([[1, 0], [-1, 0], [0, 1], [0, -1]])
    phi = solve_semidiscrete(mu)
    # symmetry forces equal intercepts
    assert np.ptp(phi.intercepts) < 1e-2
    assert np.allclose(phi.info["cell_masses"], 0.25, atol=1e-2)


def test_semidiscrete_errors():
    with pytest.raises(NotCenteredError):
        solve_semidiscrete(empirical([[0.0], [1.0]]))
    with pytest.raises(HyperplaneSupportError):
        solve_semidiscrete(empirical([[-1.0, 0.0], [1.0, 0.0]], check_support=False))


@given(st.floats(0.2, 20.0), st.lists(st.floats(-6, 6), min_size=1, max_size=20))
def test_smoothing_sandwich(beta, xs):
    phi = solve_semidiscrete(empirical([[-1.0], [0.0], [0.0], [1.0]]))
    sm = smooth_max_affine(phi, beta)
    x = np.array(xs)
    lo, mid = phi.value(x), sm.value(x)
    assert np.all(lo <= mid + 1e-12)
    assert np.all(mid <= lo + math.log(3) / beta + 1e-12)


def test_smoothed_two_point_hessian():
    phi = closed_form_map(empirical([[-1.0], [1.0]]))
    for beta in (0.5, 1.0, 4.0):
        # beta^{-1} log(2 cosh(beta x)) - c has second derivative beta at 0
        assert smooth_max_affine(phi, beta).hessian(np.array([0.0]))[0, 0, 0] == pytest.approx(beta)


def test_smoothing_rejects_bad_temperature():
    phi = closed_form_map(empirical([[-1.0], [1.0]]))
    with pytest.raises(ValueError):
        smooth_max_affine(phi, 0.0)


@given(st.lists(st.floats(-6, 6), min_size=2, max_size=2), st.floats(0, 1))
def test_convexity_along_segments(pair, t):
    # phi(t a + (1-t) b) <= t phi(a) + (1-t) phi(b) for every backend
    a, b = pair
    phi = solve_semidiscrete(empirical([[-1.0], [0.0], [0.0], [1.0]]))
    for m in (ClosedForm1D("cube"), ClosedForm1D("exponential"), phi, smooth_max_affine(phi, 3.0)):
        mid = m.value(np.array([t * a + (1 - t) * b]))[0]
        chord = t * m.value(np.array([a]))[0] + (1 - t) * m.value(np.array([b]))[0]
        assert mid <= chord + 1e-12 * (1 + abs(chord))


def test_json_roundtrip(tmp_path, grid_maps):
    box2 = make_measure({"family": "uniform_box", "dim": 2, "params": {"lo": -1, "hi": 1}})
    sd = solve_semidiscrete(empirical([[-1.0], [0.0], [0.0], [1.0]]))
    cases = [closed_form_map(box2), sd, smooth_max_affine(sd, 2.0), grid_maps["unif"],
             compose_linear(closed_form_map(box2), [[2.0, 0.5], [0.0, 1.0]])]
    z = np.random.default_rng(0).normal(size=(7, 2))
    for k, m in enumerate(cases):
        path = tmp_path / f"m{k}.json"
        m.to_json(path)
        back = load_map(path)
        pts = z[:, : m.dim]
        assert np.array_equal(m.value(pts), back.value(pts))
        assert map_from_dict(json.loads(m.to_json())).backend == m.backend


@pytest.mark.parametrize("key", ["unif", "gauss4", "expo"])
def test_pushforward_closed_forms(closed_maps, measures, key):
    r = pushforward_check(closed_maps[key], measures[key], count=100_000, seed=1)
    assert r.statistic < 0.006


def test_pushforward_rejects_wrong_target(closed_maps):
    wrong = make_measure({"family": "uniform_box", "dim": 1, "params": {"lo": 0.0, "hi": 2.0}}, center=False)
    r = pushforward_check(closed_maps["unif"], wrong, count=20_000)
    assert r.statistic > 0.4


def test_pushforward_2d_energy():
    box = make_measure({"family": "uniform_box", "dim": 2, "params": {"lo": -1, "hi": 1}})
    r = pushforward_check(closed_map := closed_form_map(box), box, count=2000, permutations=19)
    assert r.method == "energy" and r.p_value > 0.05
    assert closed_map.dim == 2


def test_solve_map_dispatch(measures):
    assert solve_map(measures["unif"]).backend == "closed_form"
    assert solve_map(empirical([[-1.0], [1.0]])).backend == "max_affine"
    assert solve_map(empirical([[-1.0], [1.0]]), backend="smoothed_max_affine").backend == "smoothed_max_affine"
    q2 = make_measure({"family": "product", "dim": 2, "params": {"factors": [SPECS["unif"], SPECS["quartic"]]}})
    pm = solve_map(q2, nodes=2048)
    assert pm.backend == "product"
    assert [m.backend for m in pm.maps] == ["closed_form", "grid1d"]


def test_product_gaussian_is_standard():
    phi = closed_form_map(standard_gaussian(3))
    x = np.random.default_rng(1).normal(size=(5, 3))
    assert np.allclose(phi.hessian(x), np.eye(3))
