import math

import numpy as np
import pytest

from conftest import random_complex
from stablerank.errors import BlockStructureError, ConditioningError, ContourCollisionError, PreconditionError
from stablerank.linalg import operator_norm
from stablerank.riesz import (
    choose_eps,
    contour_resolvent_sup,
    embed_corner,
    extract_corner,
    random_instance,
    riesz_corner,
    riesz_idempotent,
    similarity_swap,
)


def spectral_projector(B, radius=0.75):
    vals, vecs = np.linalg.eig(B)
    inside = (np.abs(vals) < radius).astype(float)
    return vecs @ np.diag(inside) @ np.linalg.inv(vecs)


def small(rng, m, norm=0.5):
    A = random_complex(rng, m, m)
    return A * norm / operator_norm(A)


def test_embed_corner():
    np.testing.assert_array_equal(embed_corner(np.zeros((1, 1)), 1), np.diag([0, 1]))
    with pytest.raises(PreconditionError):
        embed_corner(np.eye(2), 1)


def test_embed_corner_norm_and_spectrum(rng):
    A = small(rng, 4)
    Ap = embed_corner(A, 3)
    assert operator_norm(Ap) == pytest.approx(1.0)
    spec = np.sort_complex(np.linalg.eigvals(Ap))
    expected = np.sort_complex(np.concatenate([np.linalg.eigvals(A), np.ones(3)]))
    np.testing.assert_allclose(spec, expected, atol=1e-12)


def test_resolvent_sup_examples():
    # ||(zI)^{-1}|| = 4/3 on the circle, below the floor
    assert contour_resolvent_sup(np.zeros((2, 2))) == 4.0
    # 1 / (3/4 - 1/2) = 4 at z = 3/4, which is a node
    assert contour_resolvent_sup(np.array([[0.5]])) == pytest.approx(4 * 1.05)


def test_resolvent_sup_converges(rng):
    for _ in range(10):
        m = int(rng.integers(1, 9))
        A = small(rng, m, rng.uniform(0.1, 0.5))
        M1 = contour_resolvent_sup(A, 128)
        M2 = contour_resolvent_sup(A, 256)
        assert abs(M2 - M1) / M1 < 0.01


def test_resolvent_sup_collision():
    with pytest.raises(ContourCollisionError):
        contour_resolvent_sup(np.array([[0.75]]), 8)


def test_idempotent_of_diagonal():
    P = riesz_idempotent(np.diag([0.0, 1.0]))
    np.testing.assert_allclose(P, np.diag([1, 0]), atol=1e-12)


def test_idempotent_of_embedded_corner(rng):
    A = small(rng, 5)
    Ap = embed_corner(A, 2)
    P = riesz_idempotent(Ap)
    E = np.diag([1.0] * 5 + [0.0] * 2)
    np.testing.assert_allclose(P, spectral_projector(Ap), atol=1e-8)
    np.testing.assert_allclose(P, E, atol=1e-8)


def test_idempotent_matches_spectral_projector(rng):
    for _ in range(10):
        B = embed_corner(small(rng, 6), 2) + 1e-3 * random_complex(rng, 8, 8) / 20
        P = riesz_idempotent(B, 256)
        assert operator_norm(P @ P - P) <= 1e-8
        assert operator_norm(P @ B - B @ P) <= 1e-8
        np.testing.assert_allclose(P, spectral_projector(B), atol=1e-8)


def test_idempotent_collision():
    with pytest.raises(ContourCollisionError):
        riesz_idempotent(np.diag([0.75, 0.0]), 4)


def test_similarity_identity():
    E = np.diag([1.0, 1.0, 0.0])
    np.testing.assert_allclose(similarity_swap(E, E), np.eye(3), atol=1e-15)


def test_similarity_rotation():
    for t in (1e-3, 1e-2, 0.1, 0.3):
        c, s = math.cos(t), math.sin(t)
        v = np.array([c, s, 0.0])
        P = np.outer(v, v)
        E = np.diag([1.0, 0.0, 0.0])
        S = similarity_swap(P, E)
        assert operator_norm(S - np.eye(3)) == pytest.approx(operator_norm(P - E), abs=1e-12)
        assert operator_norm(S @ E - P @ S) <= 1e-10
        assert operator_norm(np.linalg.inv(S)) <= 1 / (1 - operator_norm(P - E)) + 1e-12


def test_similarity_conditioning():
    with pytest.raises(ConditioningError):
        similarity_swap(np.diag([0.0, 1.0]), np.diag([1.0, 0.0]))


def test_extract_corner_unperturbed(rng):
    A = small(rng, 4)
    Ap = embed_corner(A, 2)
    B1, info = extract_corner(Ap, np.eye(6), 4)
    np.testing.assert_array_equal(B1, A)
    assert info["off_corner"] == 0


def test_extract_corner_detects_coupling(rng):
    B = embed_corner(small(rng, 3), 2)
    B[0, 4] = 0.1
    with pytest.raises(BlockStructureError):
        extract_corner(B, np.eye(5), 3)


def test_choose_eps():
    assert choose_eps(4.0, 1e-3) == 1e-3
    assert choose_eps(4.0, 1.0) == pytest.approx(1 / (6 * math.pi * 16) / 2)


def test_zero_perturbation_pipeline(rng):
    A = small(rng, 6)
    Ap = embed_corner(A, 2)
    report = riesz_corner(A, Ap, 2, 1e-3)
    assert report.projection_distance <= 1e-12
    np.testing.assert_allclose(report.S, np.eye(8), atol=1e-12)
    np.testing.assert_allclose(report.B1, A, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_full_pipeline(seed):
    A, B, eps, M = random_instance(6, 2, seed)
    r = riesz_corner(A, B, 2, eps, M=M)
    assert eps < 1 / (6 * math.pi * M * M)
    assert r.eps_prime < 0.5
    assert r.max_resolvent <= 2 * M
    assert r.projection_distance <= r.eps_prime
    assert abs(r.similarity_distance - r.projection_distance) <= 1e-12
    assert r.conjugation_distance <= r.eps_second
    assert r.corner_distance < r.eps + r.eps_second
    assert r.B1_min_singular > 0


def test_pipeline_rejects_far_perturbation(rng):
    A = small(rng, 3)
    with pytest.raises(PreconditionError):
        riesz_corner(A, embed_corner(A, 1) + 0.01 * np.eye(4), 1, 1e-3)
