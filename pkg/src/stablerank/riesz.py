"""Riesz idempotents near a corner embedding ``A' = A (+) I``.

A matrix ``B`` close to ``A'`` is conjugated by the similarity built from
its spectral idempotent inside the circle ``|z| = 3/4``.  The result is
block diagonal, and its leading block ``B1`` is a small invertible
perturbation of ``A``.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import (
    BlockStructureError,
    ConditioningError,
    ContourCollisionError,
    PreconditionError,
    SingularityError,
)

RADIUS = 0.75
DEFAULT_NODES = 256
SAFETY = 1.05
M_FLOOR = 4.0


@dataclass(frozen=True, eq=False)
class RieszReport:
    M: float
    eps: float
    eps_prime: float
    eps_second: float
    P: np.ndarray
    E: np.ndarray
    S: np.ndarray
    B1: np.ndarray
    idempotency_residual: float
    commutation_residual: float
    projection_distance: float
    similarity_distance: float
    intertwining_residual: float
    off_corner: float
    conjugation_distance: float
    corner_distance: float
    max_resolvent: float
    convergence: float
    B1_min_singular: float
    quad_nodes: int

    def to_json(self):
        out = {}
        for name, value in self.__dict__.items():
            if isinstance(value, np.ndarray):
                out[name] = {"re": value.real.tolist(), "im": value.imag.tolist()}
            else:
                out[name] = value
        return out


def nodes_on_circle(count, radius=RADIUS):
    theta = 2 * np.pi * np.arange(count) / count
    return radius * np.exp(1j * theta)


def embed_corner(A, pad):
    A = np.asarray(A, dtype=complex)
    if pad < 1:
        raise PreconditionError("pad must be at least 1")
    if linalg.operator_norm(A) > 0.5 + 1e-12:
        raise PreconditionError("the corner needs ||A|| <= 1/2")
    m = A.shape[0]
    out = np.zeros((m + pad, m + pad), dtype=complex)
    out[:m, :m] = A
    out[m:, m:] = np.eye(pad)
    return out


def contour_resolvent_sup(A, nodes=DEFAULT_NODES):
    """Sampled sup of ``||(zI - A)^{-1}||`` on the circle, padded by 5% and floored at 4."""
    best = 0.0
    for z in nodes_on_circle(nodes):
        try:
            _, norm = linalg.resolvent_with_norm(A, z, gap=1e-10)
        except SingularityError as exc:
            raise ContourCollisionError(str(exc)) from exc
        best = max(best, norm)
    return max(SAFETY * best, M_FLOOR)


def riesz_idempotent(B, nodes=DEFAULT_NODES, with_norms=False):
    """Trapezoidal approximation of ``(1/2 pi i) \\oint (zI - B)^{-1} dz``.

    With ``z = r e^{i theta}`` and ``dz = i z d theta`` the rule reduces to
    the node average of ``z (zI - B)^{-1}``.  Terms are summed in node
    order so the result is reproducible.
    """
    B = np.asarray(B, dtype=complex)
    P = np.zeros_like(B)
    norms = []
    for z in nodes_on_circle(nodes):
        try:
            R, norm = linalg.resolvent_with_norm(B, z, gap=1e-10)
        except SingularityError as exc:
            raise ContourCollisionError(str(exc)) from exc
        P += z * R
        norms.append(norm)
    P /= nodes
    return (P, np.array(norms)) if with_norms else P


def similarity_swap(P, E):
    """``S = P E + (I - P)(I - E)``, which satisfies ``S E = P S``."""
    P = np.asarray(P, dtype=complex)
    E = np.asarray(E, dtype=complex)
    dist = linalg.operator_norm(P - E)
    if dist >= 0.5:
        raise ConditioningError(f"||P - E|| = {dist:.3g} is not below 1/2")
    I = np.eye(P.shape[0])
    return P @ E + (I - P) @ (I - E)


def extract_corner(B, S, m, tol=1e-8):
    """Conjugate ``B`` by ``S`` and return the leading ``m x m`` block with residuals."""
    B = np.asarray(B, dtype=complex)
    Bc = np.linalg.solve(S, B @ S)
    off = max(linalg.operator_norm(Bc[:m, m:]), linalg.operator_norm(Bc[m:, :m]))
    if off > tol * max(linalg.operator_norm(B), 1.0):
        raise BlockStructureError(f"off-corner blocks of S^-1 B S have norm {off:.3e}")
    return Bc[:m, :m], {"conjugated": Bc, "off_corner": off}


def choose_eps(M, requested):
    """Largest allowed perturbation: half of ``(6 pi M^2)^{-1}``, capped by ``requested``."""
    return min(requested, 1.0 / (6 * math.pi * M * M) / 2)


def riesz_corner(A, B, pad, eps, nodes=DEFAULT_NODES, M=None):
    """Run the whole corner pipeline for ``B`` within ``eps`` of ``A (+) I``."""
    A = np.asarray(A, dtype=complex)
    m = A.shape[0]
    Ap = embed_corner(A, pad)
    M = contour_resolvent_sup(A, nodes) if M is None else M
    if not eps < 1 / (6 * math.pi * M * M):
        raise PreconditionError("eps must be below (6 pi M^2)^-1")
    if linalg.operator_norm(Ap - B) >= eps:
        raise PreconditionError("B is not within eps of the embedded corner")
    eps_prime = 3 * math.pi * M * M * eps
    eps_second = (1 + 2 * eps) * eps_prime / (1 - eps_prime)

    P, norms = riesz_idempotent(B, nodes, with_norms=True)
    coarse = riesz_idempotent(B, nodes // 2)
    E = np.zeros_like(Ap)
    E[:m, :m] = np.eye(m)
    S = similarity_swap(P, E)
    B1, info = extract_corner(B, S, m)
    B1_sv = np.linalg.svd(B1, compute_uv=False)
    return RieszReport(
        M=M,
        eps=eps,
        eps_prime=eps_prime,
        eps_second=eps_second,
        P=P,
        E=E,
        S=S,
        B1=B1,
        idempotency_residual=linalg.operator_norm(P @ P - P),
        commutation_residual=linalg.operator_norm(P @ B - B @ P),
        projection_distance=linalg.operator_norm(P - E),
        similarity_distance=linalg.operator_norm(S - np.eye(S.shape[0])),
        intertwining_residual=linalg.operator_norm(S @ E - P @ S),
        off_corner=info["off_corner"],
        conjugation_distance=linalg.operator_norm(info["conjugated"] - B),
        corner_distance=linalg.operator_norm(A - B1),
        max_resolvent=float(norms.max()),
        convergence=linalg.operator_norm(P - coarse),
        B1_min_singular=float(B1_sv[-1]),
        quad_nodes=nodes,
    )


def random_instance(m, pad, seed, requested_eps=1e-3, nodes=DEFAULT_NODES):
    """Seeded ``A`` with ``||A|| <= 1/2`` and ``B`` at distance ``0.9 eps`` from ``A (+) I``."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    A *= 0.5 * (1 - 1e-12) / linalg.operator_norm(A)
    M = contour_resolvent_sup(A, nodes)
    eps = choose_eps(M, requested_eps)
    G = rng.standard_normal((m + pad, m + pad)) + 1j * rng.standard_normal((m + pad, m + pad))
    B = embed_corner(A, pad) + 0.9 * eps * G / linalg.operator_norm(G)
    return A, B, eps, M
