import numpy as np
import pytest

from conftest import random_complex
from stablerank.errors import PreconditionError, SingularityError
from stablerank.linalg import (
    column_space_projection,
    numerical_rank,
    operator_norm,
    partial_isometry_between,
    polar,
    resolvent,
)
from stablerank.riesz import nodes_on_circle


def random_unitary(rng, n):
    q, r = np.linalg.qr(random_complex(rng, n, n))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def test_polar_identity():
    f = polar(np.eye(3))
    np.testing.assert_allclose(f.unitary, np.eye(3), atol=1e-14)
    np.testing.assert_allclose(f.positive, np.eye(3), atol=1e-14)


def test_polar_zero():
    f = polar(np.zeros((2, 2)))
    np.testing.assert_array_equal(f.unitary, np.eye(2))
    np.testing.assert_array_equal(f.positive, np.zeros((2, 2)))


def test_polar_hand_example():
    # D = diag(2, -3) = diag(1, -1) diag(2, 3)
    f = polar(np.diag([2.0, -3.0]))
    np.testing.assert_allclose(f.unitary, np.diag([1, -1]), atol=1e-14)
    np.testing.assert_allclose(f.positive, np.diag([2, 3]), atol=1e-14)


def test_polar_reconstruction_including_singular(rng):
    for trial in range(100):
        n = int(rng.integers(1, 8))
        D = random_complex(rng, n, n)
        if trial % 2:
            r = int(rng.integers(0, n))
            D = random_complex(rng, n, r) @ random_complex(rng, r, n)
        f = polar(D)
        U, P = f.unitary, f.positive
        assert np.linalg.norm(U.conj().T @ U - np.eye(n), 2) <= 1e-10
        np.testing.assert_allclose(P, P.conj().T, atol=1e-12)
        assert np.linalg.eigvalsh(P).min() >= -1e-10
        assert np.linalg.norm(U @ P - D, 2) <= 1e-10 * max(1, np.linalg.norm(D, 2))
        # P is the square root of D* D
        np.testing.assert_allclose(P @ P, D.conj().T @ D, atol=1e-9 * max(1, np.abs(D).max() ** 2))


def test_operator_norm(rng):
    assert operator_norm(np.eye(3)) == pytest.approx(1.0)
    assert operator_norm(np.diag([1.0, 2.0, 3.0])) == pytest.approx(3.0)
    for _ in range(10):
        T = random_complex(rng, 7, 5)
        oracle = np.sqrt(np.linalg.eigvalsh(T.conj().T @ T).max())
        assert operator_norm(T) == pytest.approx(oracle, rel=1e-12)


def test_numerical_rank_examples(rng):
    assert numerical_rank(np.zeros((4, 3))) == 0
    u, v = random_complex(rng, 5, 1), random_complex(rng, 1, 4)
    assert numerical_rank(u @ v) == 1
    for r in range(0, 6):
        T = random_complex(rng, 9, r) @ random_complex(rng, r, 7)
        assert numerical_rank(T) == r


def test_numerical_rank_unitary_invariance(rng):
    for r in range(1, 6):
        T = random_complex(rng, 6, r) @ random_complex(rng, r, 6)
        base = numerical_rank(T, 1e-8)
        for _ in range(3):
            L, R = random_unitary(rng, 6), random_unitary(rng, 6)
            assert numerical_rank(L @ T @ R, 1e-8) == base


def test_column_space_projection_zero():
    Q = column_space_projection([np.zeros((5, 5))], slice(1, 5))
    assert not np.any(Q)


def test_column_space_projection_single_row():
    T = np.zeros((5, 5), dtype=complex)
    T[0, 1:] = [1, 2j, 0, -1]
    block = slice(1, 5)
    Q = column_space_projection([T], block)
    assert numerical_rank(Q) == 1
    E = np.diag([0, 1, 1, 1, 1]).astype(complex)
    np.testing.assert_allclose(T @ E, T @ Q, atol=1e-14)


def test_column_space_projection_residual(rng):
    tol = 1e-10
    n = 12
    block = slice(4, 12)
    E = np.zeros((n, n))
    E[block, block] = np.eye(8)
    Ts = [random_complex(rng, 3, 2) @ random_complex(rng, 2, n) for _ in range(2)]
    Ts = [np.vstack([T, np.zeros((n - 3, n))]) for T in Ts]
    Q = column_space_projection(Ts, block, tol)
    np.testing.assert_allclose(Q @ Q, Q, atol=1e-12)
    assert numerical_rank(Q) == 4
    for T in Ts:
        assert np.linalg.norm(T @ (E - Q), 2) <= 10 * tol * np.linalg.norm(T, 2)


def test_partial_isometry_matrix_unit():
    W = partial_isometry_between(np.diag([0, 1]), np.diag([1, 0]))
    np.testing.assert_allclose(np.abs(W), [[0, 1], [0, 0]], atol=1e-14)


def test_partial_isometry_zero_target():
    assert not np.any(partial_isometry_between(np.diag([0, 1]), np.zeros((2, 2))))


def test_partial_isometry_random_pair(rng):
    n = 10
    basis = random_unitary(rng, n)
    src = basis[:, :5] @ basis[:, :5].conj().T
    tgt = basis[:, 5:8] @ basis[:, 5:8].conj().T
    W = partial_isometry_between(src, tgt)
    init = W.conj().T @ W
    assert np.linalg.norm(W @ W.conj().T - tgt, 2) <= 1e-10
    assert np.linalg.norm(init @ init - init, 2) <= 1e-10
    assert np.linalg.norm(src @ init - init, 2) <= 1e-10
    assert round(np.trace(init).real) == 3
    assert np.linalg.norm(tgt @ W @ src - W, 2) <= 1e-10
    assert operator_norm(W) == pytest.approx(1.0, abs=1e-10)


def test_partial_isometry_rank_precondition():
    with pytest.raises(PreconditionError):
        partial_isometry_between(np.diag([1, 0, 0]), np.diag([0, 1, 1]))


def test_resolvent_examples():
    np.testing.assert_allclose(resolvent(np.zeros((2, 2)), 1.0), np.eye(2), atol=1e-15)
    np.testing.assert_allclose(resolvent(np.array([[0.5]]), 0.75), [[4.0]], atol=1e-12)
    with pytest.raises(SingularityError):
        resolvent(np.diag([0.5, 0.2]), 0.5)


def test_resolvent_neumann_bound(rng):
    for _ in range(10):
        B = random_complex(rng, 6, 6)
        B *= 0.5 / operator_norm(B)
        for z in nodes_on_circle(64):
            R = resolvent(B, z)
            assert np.linalg.norm((z * np.eye(6) - B) @ R - np.eye(6), 2) <= 1e-10 * np.linalg.cond(z * np.eye(6) - B)
            assert operator_norm(R) <= 4 + 1e-12
