import numpy as np
import pytest

from ballrigidity.polynomials import Poly, monomial_matrix, multi_indices, stack_on_basis


def test_monomial_count():
    assert multi_indices(2, 3).shape == (10, 2)
    assert multi_indices(3, 2).shape == (10, 3)


def test_eval_matches_direct():
    rng = np.random.default_rng(0)
    p = Poly.random(3, 4, rng)
    X = rng.standard_normal((50, 3))
    direct = np.zeros(50)
    for e, c in zip(p.expo, p.coef):
        direct += c * np.prod(X**e, axis=1)
    assert np.allclose(p(X), direct, rtol=1e-13, atol=1e-13)


def test_diff_and_laplacian():
    # p = x^2 y + y^3
    p = Poly(2, [[2, 1], [0, 3]], [1.0, 1.0])
    dx = p.diff(0)
    X = np.array([[1.5, -0.7], [0.2, 2.0]])
    assert np.allclose(dx(X), 2 * X[:, 0] * X[:, 1])
    lap = p.laplacian()
    assert np.allclose(lap(X), 2 * X[:, 1] + 6 * X[:, 1])


def test_mul_product_rule():
    rng = np.random.default_rng(1)
    p = Poly.random(2, 2, rng)
    q = Poly.random(2, 3, rng)
    X = rng.standard_normal((20, 2))
    assert np.allclose((p * q)(X), p(X) * q(X), rtol=1e-12, atol=1e-12)
    d = (p * q).diff(1)
    assert np.allclose(d(X), p.diff(1)(X) * q(X) + p(X) * q.diff(1)(X),
                       rtol=1e-12, atol=1e-12)


def test_duplicate_merge_and_zero_drop():
    p = Poly(2, [[1, 0], [1, 0], [0, 1]], [1.0, 2.0, 0.0])
    assert p.expo.shape[0] == 1
    assert p.coef[0] == 3.0


def test_stack_on_basis_roundtrip():
    rng = np.random.default_rng(2)
    polys = [Poly.random(2, 3, rng) for _ in range(4)]
    expo = multi_indices(2, 3)
    C = stack_on_basis(polys, expo)
    X = rng.standard_normal((30, 2))
    V = monomial_matrix(X, expo)
    stacked = V @ C
    for j, p in enumerate(polys):
        assert np.allclose(stacked[:, j], p(X), rtol=1e-13, atol=1e-13)


def test_stack_rejects_foreign_monomials():
    p = Poly(2, [[4, 0]], [1.0])
    with pytest.raises(ValueError):
        stack_on_basis([p], multi_indices(2, 3))


def test_serialization_roundtrip():
    rng = np.random.default_rng(3)
    p = Poly.random(3, 3, rng)
    q = Poly.from_dict(p.to_dict())
    X = rng.standard_normal((10, 3))
    assert np.array_equal(p(X), q(X))
