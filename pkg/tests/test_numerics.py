import numpy as np
import pytest

from signspace.numerics import (
    cosine_distance,
    cosine_similarity,
    jacobi_eigh,
    singular_values,
    singular_values_stack,
    softmax,
)
from signspace.types import ValidationError

FEATURE_SHAPES = [(4, 15), (21, 3), (21, 6), (42, 3), (8, 15), (4, 30)]


def test_jacobi_identity():
    assert np.array_equal(jacobi_eigh(np.eye(3)), [1.0, 1.0, 1.0])


def test_jacobi_diagonal():
    assert np.array_equal(jacobi_eigh(np.diag([9.0, 4.0, 1.0])), [9.0, 4.0, 1.0])


def test_jacobi_matches_reference_eigensolver():
    rng = np.random.default_rng(42)
    for k in (1, 2, 3, 5, 8, 13, 21):
        m = rng.normal(size=(k, k))
        sym = 0.5 * (m + m.T)
        mine = jacobi_eigh(sym)
        ref = np.sort(np.linalg.eigvalsh(sym))[::-1]
        assert np.max(np.abs(mine - ref)) < 1e-9


def test_jacobi_rejects_bad_input():
    with pytest.raises(ValidationError, match="symmetric"):
        jacobi_eigh(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValidationError, match="square"):
        jacobi_eigh(np.zeros((2, 3)))
    with pytest.raises(ValidationError, match="non-finite"):
        jacobi_eigh(np.full((2, 2), np.nan))
    with pytest.raises(ValidationError, match="tol"):
        jacobi_eigh(np.eye(2), tol=0.0)


def test_singular_values_diagonal():
    assert np.allclose(singular_values(np.diag([3.0, 4.0])), [4.0, 3.0])


def test_singular_values_zero_matrix():
    assert np.array_equal(singular_values(np.zeros((4, 15))), np.zeros(4))


def test_singular_values_match_oracle_on_feature_shapes():
    rng = np.random.default_rng(3)
    for shape in FEATURE_SHAPES + [(1, 1), (7, 7), (42, 42), (30, 4)]:
        a = rng.normal(size=shape)
        mine = singular_values(a)
        oracle = np.linalg.svd(a, compute_uv=False)
        assert mine.shape[0] == min(shape)
        assert np.all(mine >= 0.0)
        assert np.all(np.diff(mine) <= 0.0)
        assert np.max(np.abs(mine - oracle)) < 1e-8


def test_singular_values_scale_equivariance():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(6, 9))
    base = singular_values(a)
    for c in (0.5, 3.0, -2.0):
        scaled = singular_values(c * a)
        assert np.max(np.abs(scaled - abs(c) * base)) < 1e-9 * max(abs(c), 1.0)


def test_singular_values_energy_identity():
    rng = np.random.default_rng(5)
    for shape in FEATURE_SHAPES:
        a = rng.normal(size=shape)
        sv = singular_values(a)
        frob2 = float(np.sum(a * a))
        assert abs(float(np.sum(sv**2)) - frob2) <= 1e-9 * frob2


def test_singular_values_stack_matches_single():
    rng = np.random.default_rng(6)
    stack = rng.normal(size=(7, 8, 15))
    batch = singular_values_stack(stack)
    for i in range(7):
        assert np.array_equal(batch[i], singular_values(stack[i]))


def test_cosine_similarity_basics():
    rng = np.random.default_rng(7)
    u = rng.normal(size=12)
    assert abs(cosine_similarity(u, u) - 1.0) < 1e-12
    assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert abs(cosine_similarity(u, 2.0 * u) - 1.0) < 1e-12
    assert abs(cosine_distance(u, u)) < 1e-12


def test_cosine_similarity_positive_scale_invariance():
    rng = np.random.default_rng(8)
    for _ in range(50):
        u, v = rng.normal(size=(2, 9))
        alpha, beta = rng.uniform(0.01, 100.0, size=2)
        assert abs(
            cosine_similarity(alpha * u, beta * v) - cosine_similarity(u, v)
        ) < 1e-12


def test_cosine_similarity_errors():
    with pytest.raises(ValidationError, match="zero-norm"):
        cosine_similarity([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(ValidationError, match="mismatch"):
        cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])


def test_softmax_two_element_closed_form():
    p = softmax(np.array([1.0, 0.0]))
    assert abs(p[0] - np.e / (1.0 + np.e)) < 1e-12
    assert abs(p[0] - 0.7311) < 1e-4
    assert abs(float(np.sum(p)) - 1.0) <= 1e-12


def test_softmax_symmetry():
    assert np.allclose(softmax(np.array([2.5] * 3)), [1 / 3] * 3, atol=1e-15)


def test_softmax_overflow_stability():
    p = softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(p))
    assert abs(p[0] - 1.0) < 1e-12


def test_softmax_preserves_argmax():
    rng = np.random.default_rng(9)
    for _ in range(200):
        s = rng.normal(size=rng.integers(1, 12)) * rng.uniform(0.1, 50.0)
        t = rng.uniform(0.05, 10.0)
        assert int(np.argmax(softmax(s, t))) == int(np.argmax(s))


def test_softmax_errors():
    with pytest.raises(ValidationError):
        softmax(np.array([]))
    with pytest.raises(ValidationError, match="temperature"):
        softmax(np.array([1.0]), temperature=0.0)
    with pytest.raises(ValidationError, match="non-finite"):
        softmax(np.array([np.inf, 0.0]))
