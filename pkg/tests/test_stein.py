import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from momentstein.errors import KernelInvariantError, SingularHessianError
from momentstein.measures import make_measure, standard_gaussian
from momentstein.moment_map import closed_form_map
from momentstein.stein import (
    Potential1D, SteinKernelField, constant_kernel, identity_kernel, kernel_1d_explicit, kernel_from_moment_map,
    operator_norm_profile, stein_identity_residual, sum_kernel_residual, transported_kernel, vector_test_family,
)

# kernels with a closed form: tau(y) = rho(y)^{-1} int_y^inf s rho(s) ds
EXACT = {
    "unif": lambda y: (1 - y * y) / 2,
    "unif3": lambda y: (3 - y * y) / 2,
    "gauss4": lambda y: 4.0 + 0 * y,
    "gauss025": lambda y: 0.25 + 0 * y,
    "expo": lambda y: 1 + y,
}


def _y(key):
    return {"unif": np.linspace(-0.99, 0.99, 41), "unif3": np.linspace(-1.7, 1.7, 41),
            "expo": np.linspace(-0.99, 6.0, 41), "gauss025": np.linspace(-2, 2, 41)}.get(key, np.linspace(-5, 5, 41))


@pytest.mark.parametrize("key", sorted(EXACT))
def test_explicit_kernel_oracle(measures, key):
    k = kernel_1d_explicit(measures[key])
    y = _y(key)
    assert np.max(np.abs(k(y)[:, 0, 0] - EXACT[key](y))) < 1e-10


@pytest.mark.parametrize("key", sorted(EXACT))
def test_moment_map_kernel_oracle(closed_maps, grid_maps, key):
    y = _y(key)
    k = kernel_from_moment_map(closed_maps[key])
    assert np.max(np.abs(k(y)[:, 0, 0] - EXACT[key](y))) < 1e-10
    kg = kernel_from_moment_map(grid_maps[key])
    assert np.max(np.abs(kg(y)[:, 0, 0] - EXACT[key](y))) < 1e-4


def test_quartic_explicit_matches_solver(measures, grid_maps):
    y = np.linspace(-3, 3, 61)
    a = kernel_1d_explicit(measures["quartic"])(y)
    b = kernel_from_moment_map(grid_maps["quartic"])(y)
    assert np.max(np.abs(a - b)) < 1e-4


@pytest.mark.parametrize("key", ["unif", "unif3", "gauss4", "gauss025", "expo", "quartic"])
def test_stein_identity_residuals(measures, grid_maps, key):
    mu = measures[key]
    kernels = [kernel_1d_explicit(mu), kernel_from_moment_map(grid_maps[key])]
    if key in EXACT:
        kernels.append(kernel_from_moment_map(closed_form_map(mu)))
    for k in kernels:
        assert stein_identity_residual(k, mu).max < 1e-6


def test_cubic_spot_check(measures):
    # E[Y * Y^3] = 1/5 and E[tau 3Y^2] = int (1 - y^2)/2 3y^2 dy/2 = 1/5
    k = kernel_1d_explicit(measures["unif"])
    t = [t for t in vector_test_family(1) if t.name.startswith("x^3")]
    r = stein_identity_residual(k, measures["unif"], t)
    (name,) = r.lhs
    assert r.lhs[name] == pytest.approx(0.2, abs=1e-10)
    assert r.rhs[name] == pytest.approx(0.2, abs=1e-10)


def test_identity_kernel_fails_for_uniform(measures):
    assert stein_identity_residual(identity_kernel(1), measures["unif"]).max == pytest.approx(0.8, abs=1e-10)


@pytest.mark.parametrize("key, floor", [("unif3", 0.1), ("expo", 0.1)])
def test_identity_kernel_characterizes_gaussian(measures, key, floor):
    assert stein_identity_residual(identity_kernel(1), measures["gauss1"]).max < 1e-10
    assert stein_identity_residual(identity_kernel(1), measures[key]).max > floor


def test_product_kernel_is_diagonal():
    box = make_measure({"family": "uniform_box", "dim": 2, "params": {"lo": -1, "hi": 1}})
    k = kernel_from_moment_map(closed_form_map(box))
    y = np.array([[0.3, -0.5], [0.9, 0.0]])
    T = k(y)
    assert np.allclose(T[:, 0, 1], 0) and np.allclose(T[:, 0, 0], (1 - y[:, 0] ** 2) / 2)
    assert stein_identity_residual(k, box).max < 1e-10


def test_sum_kernel_zscores(closed_maps, measures):
    k = kernel_from_moment_map(closed_maps["unif3"])
    z = sum_kernel_residual(k, measures["unif3"], 4, count=200_000, seed=3)
    assert z.max_abs < 4.0
    wrong = sum_kernel_residual(k + 1, measures["unif3"], 4, tests=vector_test_family(1)[:1], count=100_000)
    assert max(abs(v) for v in wrong.zscores.values()) > 10


def test_transported_gaussian_reference_is_plain_kernel(measures):
    V = Potential1D(lambda x: x * x / 2, lambda x: x, lambda x: np.ones_like(x), grad_inv=lambda y: y)
    y = np.linspace(-1.7, 1.7, 21)
    kt = transported_kernel(None, V, measures["unif3"])
    assert np.max(np.abs(kt(y)[:, 0, 0] - EXACT["unif3"](y))) < 1e-9


def test_transported_kernel_of_own_measure_is_identity(measures):
    # the quartic measure is e^{-V} with V = x^2/2 + x^4/4, so its kernel relative to V is 1
    V = Potential1D(lambda x: x * x / 2 + x**4 / 4, lambda x: x + x**3, lambda x: 1 + 3 * x * x)
    k = transported_kernel(None, V, measures["quartic"])
    y = np.linspace(-2, 2, 21)
    assert np.max(np.abs(k(y)[:, 0, 0] - 1.0)) < 1e-8


def test_transported_kernel_stein_identity():
    V = Potential1D(lambda x: x * x / 2 + x**4 / 4, lambda x: x + x**3, lambda x: 1 + 3 * x * x)
    g = standard_gaussian(1)
    assert stein_identity_residual(transported_kernel(None, V, g), g).max < 1e-6


def test_transported_kernel_singular_hessian():
    V = Potential1D(lambda x: x**4 / 4, lambda x: x**3, lambda x: 3 * x * x)
    k = transported_kernel(identity_kernel(1), V)
    with pytest.raises(SingularHessianError):
        k(np.array([0.0]))


def test_operator_norm_profile(closed_maps):
    k = kernel_from_moment_map(closed_maps["gauss025"])
    prof = operator_norm_profile(k, np.linspace(-3, 3, 11), epsilon=4.0)
    assert prof.max == pytest.approx(0.25) and prof.within_bound
    assert operator_norm_profile(k, np.zeros(1)).bound is None


_pairs = st.lists(st.tuples(st.floats(-0.999, 0.999), st.floats(-0.999, 0.999)), min_size=1, max_size=15)


@given(_pairs)
def test_kernels_symmetric_psd(ys):
    box = make_measure({"family": "uniform_box", "dim": 2, "params": {"lo": -1, "hi": 1}})
    k = kernel_from_moment_map(closed_form_map(box))
    T = k(np.array(ys))
    assert np.allclose(T, np.swapaxes(T, 1, 2))
    assert np.all(np.linalg.eigvalsh(T)[:, 0] >= -1e-14)


def test_invariant_violations_raise():
    bad = SteinKernelField(lambda y: np.broadcast_to([[1.0, 2.0], [0.0, 1.0]], (len(y), 2, 2)).copy(), "constant", 2)
    with pytest.raises(KernelInvariantError, match="symmetric"):
        bad(np.zeros((1, 2)))
    with pytest.raises(KernelInvariantError, match="positive semidefinite"):
        constant_kernel([[-1.0]])(np.zeros(1))


def test_to_csv(tmp_path, closed_maps):
    k = kernel_from_moment_map(closed_maps["unif"])
    path = tmp_path / "k.csv"
    k.to_csv(np.array([-0.5, 0.0, 0.5]), path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["y1", "t11"]
    assert [float(r[1]) for r in rows[1:]] == [0.375, 0.5, 0.375]


def test_vector_family_size():
    assert len(vector_test_family(1)) == 10
    assert len(vector_test_family(2)) == 40
    with pytest.raises(ValueError):
        vector_test_family(1, "v2")
