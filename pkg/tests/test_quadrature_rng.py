import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from momentstein import _rng
from momentstein.quadrature import QuadratureRule, gauss_legendre, tensor_rule
from momentstein.errors import IntegrationError


@given(st.integers(0, 39), st.floats(-5, 5), st.floats(0.1, 5))
def test_gauss_legendre_exact_for_polynomials(k, a, width):
    # 20 points per panel integrate degree <= 39 exactly
    b = a + width
    x, w = gauss_legendre(a, b, panels=3, order=20)
    exact = (b ** (k + 1) - a ** (k + 1)) / (k + 1)
    assert np.dot(w, x**k) == pytest.approx(exact, rel=1e-11, abs=1e-11)


def test_gauss_legendre_array_endpoints():
    x, w = gauss_legendre(np.array([0.0, 1.0]), np.array([1.0, 3.0]), panels=2, order=5)
    assert x.shape == w.shape == (2, 10)
    assert np.allclose(w.sum(axis=1), [1.0, 2.0])


def test_tensor_rule_integrates_products():
    r = gauss_legendre(0.0, 1.0, 4, 8)
    pts, w = tensor_rule([r, r])
    assert np.dot(w, pts[:, 0] ** 2 * pts[:, 1] ** 3) == pytest.approx(1 / 12, rel=1e-13)


def test_rule_expect_rejects_nonfinite():
    rule = QuadratureRule(np.zeros((2, 1)), np.array([0.5, 0.5]))
    with pytest.raises(IntegrationError):
        rule.expect(np.array([1.0, np.inf]))


def test_uniforms_deterministic_and_open():
    a = _rng.uniforms(7, 1000, 2)
    b = _rng.uniforms(7, 1000, 2)
    assert np.array_equal(a, b)
    assert a.min() > 0 and a.max() < 1
    assert not np.array_equal(a, _rng.uniforms(8, 1000, 2))
    assert not np.array_equal(a, _rng.uniforms(7, 1000, 2, stream=1))


@pytest.mark.parametrize("threads", [2, 3, 8])
def test_uniforms_independent_of_threads(threads):
    count = 3 * _rng.BLOCK + 17
    assert np.array_equal(_rng.uniforms(11, count, 3), _rng.uniforms(11, count, 3, threads=threads))


def test_prefix_stability():
    # the first draws do not depend on how many are requested
    small = _rng.uniforms(5, 100, 1)
    large = _rng.uniforms(5, _rng.BLOCK + 100, 1)
    assert np.array_equal(small, large[:100])


def test_normals_moments():
    z = _rng.normals(3, 200_000, 1)[:, 0]
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1) < 0.01


def test_mix_seed_order_sensitive():
    assert not np.array_equal(_rng.mix_seed(1, 2, 3), _rng.mix_seed(1, 3, 2))
    assert np.array_equal(_rng.mix_seed(1, 2, 3), _rng.mix_seed(1, 2, 3))


def test_integers_range():
    r = _rng.integers(0, 10_000, 7)
    assert r.min() >= 0 and r.max() < 7
    assert abs(np.mean(r == 3) - 1 / 7) < 0.02
    assert math.isclose(len(r), 10_000)
