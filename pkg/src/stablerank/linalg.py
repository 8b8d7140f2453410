"""Dense numerical kernels: polar factors, ranks, subspace projections, resolvents."""

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError, ShapeError, SingularityError

RANK_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class PolarFactors:
    unitary: np.ndarray
    positive: np.ndarray


def polar(D):
    """Polar decomposition ``D = U P`` with ``U`` a full unitary.

    For singular ``D`` the unmatched left and right singular vectors are
    paired in SVD order, so ``U`` is unitary rather than a partial isometry.
    The zero matrix gets ``U = I``.
    """
    D = np.asarray(D, dtype=complex)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ShapeError(f"polar needs a square matrix, got {D.shape}")
    n = D.shape[0]
    if not np.any(D):
        return PolarFactors(np.eye(n, dtype=complex), np.zeros((n, n), dtype=complex))
    w, s, vh = np.linalg.svd(D)
    u = w @ vh
    p = (vh.conj().T * s) @ vh
    p = (p + p.conj().T) / 2
    return PolarFactors(u, p)


def operator_norm(T):
    T = np.asarray(T)
    if T.size == 0:
        return 0.0
    return float(np.linalg.norm(T, 2))


def _threshold(s, tol):
    smax = s[0] if s.size else 0.0
    return max(tol * smax, RANK_FLOOR)


def numerical_rank(T, tol=1e-10):
    """Number of singular values above ``tol * sigma_max`` (and above 1e-12)."""
    if tol < 0:
        raise PreconditionError("tol must be non-negative")
    T = np.asarray(T)
    if T.size == 0:
        return 0
    s = np.linalg.svd(T, compute_uv=False)
    return int(np.count_nonzero(s > _threshold(s, tol)))


def orthonormal_range(M, tol=1e-10):
    """Orthonormal basis of the column space of ``M``.

    Singular values sitting exactly on the threshold are kept, so the rank
    is rounded up.
    """
    M = np.asarray(M, dtype=complex)
    if M.size == 0:
        return np.zeros((M.shape[0], 0), dtype=complex)
    w, s, _ = np.linalg.svd(M, full_matrices=False)
    r = int(np.count_nonzero(s >= _threshold(s, tol))) if s[0] > 0 else 0
    return w[:, :r]


def column_space_projection(Ts, restricted_to, tol=1e-10):
    """Smallest projection ``Q`` inside a coordinate block with ``T E = T Q``.

    ``restricted_to`` is a slice of coordinates (the block ``E``).  The range
    of ``Q`` is the span of the row spaces of ``T E`` for all ``T`` in ``Ts``.
    """
    Ts = [np.asarray(T) for T in Ts]
    n = Ts[0].shape[1]
    if any(T.shape[1] != n for T in Ts):
        raise ShapeError("all operators must share the column count")
    basis = _row_space(Ts, restricted_to, tol)
    q = np.zeros((n, n), dtype=complex)
    q[restricted_to, restricted_to] = basis @ basis.conj().T
    return q


def _row_space(Ts, cols, tol):
    # conjugate-transpose so the row space becomes a column space
    stack = np.vstack([T[:, cols] for T in Ts])
    rows = np.flatnonzero(np.any(stack != 0, axis=1))
    width = cols.stop - cols.start
    if rows.size == 0:
        return np.zeros((width, 0), dtype=complex)
    return orthonormal_range(stack[rows].conj().T, tol)


def projection_basis(Q):
    """Orthonormal basis for the range of an orthogonal projection."""
    Q = np.asarray(Q, dtype=complex)
    vals, vecs = np.linalg.eigh((Q + Q.conj().T) / 2)
    keep = vals > 0.5
    # largest eigenvalues first, mirroring SVD order
    return vecs[:, keep][:, ::-1]


def partial_isometry_between(source_proj, target_proj):
    """Partial isometry ``W`` with ``W W* = target`` and initial space inside ``source``."""
    src = projection_basis(source_proj)
    tgt = projection_basis(target_proj)
    if tgt.shape[1] > src.shape[1]:
        raise PreconditionError(
            f"target rank {tgt.shape[1]} exceeds source rank {src.shape[1]}"
        )
    if src.shape[1] and tgt.shape[1] and operator_norm(tgt.conj().T @ src) > 1e-8:
        raise PreconditionError("source and target projections are not orthogonal")
    r = tgt.shape[1]
    return tgt @ src[:, :r].conj().T


def _shifted(B, z):
    B = np.asarray(B, dtype=complex)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ShapeError(f"resolvent needs a square matrix, got {B.shape}")
    return z * np.eye(B.shape[0]) - B


def resolvent_with_norm(B, z, gap=1e-12):
    """``((zI - B)^{-1}, ||(zI - B)^{-1}||)`` computed from one SVD."""
    w, s, vh = np.linalg.svd(_shifted(B, z))
    if s[-1] <= gap:
        raise SingularityError(f"z = {z} lies within {gap:g} of the spectrum")
    inv = (vh.conj().T / s) @ w.conj().T
    return inv, float(1.0 / s[-1])


def resolvent(B, z):
    return resolvent_with_norm(B, z)[0]
