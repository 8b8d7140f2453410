"""Right-invertible perturbations of pairs in a nest algebra.

Given ``A, B`` in the nest algebra of a geometrically growing nest and
``eps > 0``, :func:`right_invertible_pair` builds ``A''`` and ``B'`` within
``eps`` of ``A`` and ``B`` together with an explicit column ``[C1; C2]`` such
that ``A'' C1 + B' C2 = I``.  :func:`right_invertible_pair_megablock` does the
same for nests whose atoms only grow geometrically along an arithmetic
progression, by grouping atoms into megablocks.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import (
    BudgetError,
    CertificationError,
    GrowthConditionError,
    HypothesisError,
    PreconditionError,
    ShapeError,
)
from .nest import (
    NestOperator,
    NestSpec,
    block_diagonal_mask,
    diagonal_expectation,
    first_growth_violation,
    lower_block_mask,
    matrix_from_json,
    matrix_to_json,
)

DEFAULT_TOL = 1e-8
CAPTURE_TOL = 1e-10


def default_tol():
    """Certificate tolerance, overridable through ``STABLERANK_TOL``."""
    value = os.environ.get("STABLERANK_TOL")
    return float(value) if value else DEFAULT_TOL


@dataclass(frozen=True, eq=False)
class PerturbationCertificate:
    A_pp: NestOperator
    B_p: NestOperator
    C1: np.ndarray
    C2: np.ndarray
    delta: float
    eps: float
    residual: float
    pert_A: float
    pert_B: float
    P_ranks: list
    tol: float = DEFAULT_TOL
    # shuffle isometry; P = U U* is recovered from it during validation
    U: np.ndarray = None
    # block dims used for the diagonal expectation (atoms, or megablocks)
    blocks: tuple = None
    extras: dict = field(default_factory=dict)

    @property
    def spec(self):
        return self.A_pp.spec

    def to_json(self):
        out = {
            "dims": list(self.spec.atom_dims),
            "blocks": list(self.blocks),
            "eps": self.eps,
            "delta": self.delta,
            "tol": self.tol,
            "residual": self.residual,
            "pert_A": self.pert_A,
            "pert_B": self.pert_B,
            "P_ranks": list(self.P_ranks),
            "A_pp": matrix_to_json(self.A_pp.entries),
            "B_p": matrix_to_json(self.B_p.entries),
            "C1": matrix_to_json(self.C1),
            "C2": matrix_to_json(self.C2),
            "U": matrix_to_json(self.U),
        }
        out.update(self.extras)
        return out

    @classmethod
    def from_json(cls, obj):
        spec = NestSpec(tuple(obj["dims"]))
        known = {"dims", "blocks", "eps", "delta", "tol", "residual", "pert_A",
                 "pert_B", "P_ranks", "A_pp", "B_p", "C1", "C2", "U"}
        return cls(
            A_pp=NestOperator(spec, matrix_from_json(obj["A_pp"])),
            B_p=NestOperator(spec, matrix_from_json(obj["B_p"])),
            C1=matrix_from_json(obj["C1"]),
            C2=matrix_from_json(obj["C2"]),
            delta=float(obj["delta"]),
            eps=float(obj["eps"]),
            residual=float(obj["residual"]),
            pert_A=float(obj["pert_A"]),
            pert_B=float(obj["pert_B"]),
            P_ranks=[int(r) for r in obj["P_ranks"]],
            tol=float(obj.get("tol", DEFAULT_TOL)),
            U=matrix_from_json(obj["U"]),
            blocks=tuple(obj.get("blocks", obj["dims"])),
            extras={k: v for k, v in obj.items() if k not in known},
        )


@dataclass(frozen=True)
class MegablockPlan:
    gamma: float
    J: int
    p: int
    # 1-based atom index ranges of the complete megablocks
    megablocks: list
    M: list
    # atoms after the last complete megablock
    tail: range = range(0)

    @property
    def block_length(self):
        return self.p * self.J


def _lift_block(D, s):
    """``U (P + sI)`` and its inverse for one square block.

    With ``D = W S Vh`` the polar factors are ``U = W Vh`` and
    ``P = Vh* S Vh``, so ``U (P + sI) = W (S + s) Vh``.
    """
    n = D.shape[0]
    if not np.any(D):
        # polar() takes U = I for the zero block
        return s * np.eye(n, dtype=complex), np.eye(n, dtype=complex) / s
    w, sv, vh = np.linalg.svd(D)
    sv = sv + s
    return (w * sv) @ vh, (vh.conj().T / sv) @ w.conj().T


def _check_block_diagonal(D):
    off = D.entries[~block_diagonal_mask(D.spec)]
    if off.size and np.max(np.abs(off)) > 0:
        raise PreconditionError("expected a block-diagonal operator")


def _lift(D, s):
    spec = D.spec
    lifted = np.zeros_like(D.entries)
    inverse = np.zeros_like(D.entries)
    for k in range(1, spec.num_atoms + 1):
        sl = spec.atom_slice(k)
        lifted[sl, sl], inverse[sl, sl] = _lift_block(D.entries[sl, sl], s)
    return lifted, inverse


def invertible_perturbation(D, s):
    """Replace each diagonal block ``U P`` of ``D`` by ``U (P + sI)``.

    The result is within ``s`` of ``D`` and has inverse bounded by ``1/s``.
    """
    if s <= 0:
        raise PreconditionError("s must be positive")
    _check_block_diagonal(D)
    return NestOperator(D.spec, _lift(D, s)[0])


def _coarse(spec, blocks):
    coarse = NestSpec(tuple(blocks))
    if coarse.total_dim != spec.total_dim:
        raise ShapeError("block grouping does not cover the space")
    return coarse


def _capture_bases(a0, b0, spec, tol):
    scale = max(np.linalg.norm(a0), np.linalg.norm(b0), 1.0)
    diag = block_diagonal_mask(spec)
    if max(np.max(np.abs(a0[diag])), np.max(np.abs(b0[diag]))) > 1e-14 * scale:
        raise PreconditionError("rank_capture needs strictly block upper-triangular input")
    bases = []
    for k in range(1, spec.num_atoms + 1):
        sl = spec.atom_slice(k)
        above = slice(0, sl.start)
        basis = linalg._row_space([a0[above], b0[above]], sl, tol)
        r = basis.shape[1]
        budget = spec.atom_dims[k - 1] // 2
        if r > budget:
            raise BudgetError(
                f"captured rank {r} in block {k} exceeds budget {budget}",
                k=k, rank=r, budget=budget,
            )
        bases.append(basis)
    return bases


def _projection_from_bases(spec, bases):
    n = spec.total_dim
    P = np.zeros((n, n), dtype=complex)
    for k, basis in enumerate(bases, start=1):
        sl = spec.atom_slice(k)
        P[sl, sl] = basis @ basis.conj().T
    return P


def rank_capture(A0, B0, spec=None, tol=CAPTURE_TOL):
    """Projections ``P_k <= E_k`` capturing the row spaces of ``A0 E_k`` and ``B0 E_k``.

    Only rows above block ``k`` can be nonzero in ``A0 E_k``, so each
    ``P_k`` comes from one SVD of the stacked rows of both operators.
    """
    spec = spec or A0.spec
    a0 = np.asarray(getattr(A0, "entries", A0))
    b0 = np.asarray(getattr(B0, "entries", B0))
    bases = _capture_bases(a0, b0, spec, tol)
    P = NestOperator(spec, _projection_from_bases(spec, bases))
    return P, [b.shape[1] for b in bases]


def _null_columns(M, width):
    """Orthonormal basis (columns) of the null space of ``M`` (``rows x width``)."""
    if M.shape[0] == 0:
        return np.eye(width, dtype=complex)
    _, s, vh = np.linalg.svd(M, full_matrices=True)
    r = int(np.count_nonzero(s > max(1e-10 * (s[0] if s.size else 0), 1e-12)))
    return vh[r:].conj().T


def _block_shuffle(vp, sub_dims):
    """Partial isometry ``W`` on one block with ``W W* = Q`` and ``W = Q W Q^perp``.

    ``vp`` is an orthonormal basis for the range of the projection ``Q``.

    ``W`` is kept block upper-triangular with respect to ``sub_dims``: the
    initial space is filled from the last sub-block backwards, so every tail
    of the block is invariant under ``W*``.
    """
    n, r = vp.shape
    if r == 0:
        return np.zeros((n, n), dtype=complex)
    starts = np.concatenate([[0], np.cumsum(sub_dims)])[:-1]
    coeffs = np.zeros((r, 0), dtype=complex)
    xs = np.zeros((n, 0), dtype=complex)
    for start in starts[::-1]:
        tail = slice(int(start), n)
        # coefficients (in the vp basis) of proj_P(tail)
        level = linalg.orthonormal_range(vp[tail].conj().T, 1e-10)
        need = level.shape[1] - coeffs.shape[1]
        if coeffs.shape[1] and need > 0:
            level = level - coeffs @ (coeffs.conj().T @ level)
            level = np.linalg.svd(level, full_matrices=False)[0][:, :need]
        if need == 0:
            continue
        # vectors supported on the tail, orthogonal to P and to earlier picks
        width = n - int(start)
        constraints = vp[tail].conj().T
        if xs.shape[1]:
            constraints = np.vstack([constraints, xs[tail].conj().T])
        free = _null_columns(constraints, width)
        if free.shape[1] < need:
            raise BudgetError(
                f"no room for a triangular partial isometry: need {need}, have {free.shape[1]}",
                rank=r, budget=free.shape[1],
            )
        new = np.zeros((n, need), dtype=complex)
        new[tail] = free[:, :need]
        coeffs = np.hstack([coeffs, level])
        xs = np.hstack([xs, new])
    return (vp @ coeffs) @ xs.conj().T


def shuffle_isometry(P, spec=None, sub_dims=None):
    """Block-diagonal partial isometry ``U`` with ``U U* = P`` and ``U = P U (I - P)``.

    ``sub_dims`` optionally gives, per block, the finer atom dimensions that
    ``U`` must respect (used for megablocks).
    """
    spec = spec or P.spec
    p = np.asarray(getattr(P, "entries", P))
    bases = [linalg.projection_basis(p[sl, sl]) for sl in
             (spec.atom_slice(k) for k in range(1, spec.num_atoms + 1))]
    return _shuffle_from_bases(spec, bases, sub_dims)


def _shuffle_from_bases(spec, bases, sub_dims=None):
    n = spec.total_dim
    U = np.zeros((n, n), dtype=complex)
    for k, basis in enumerate(bases, start=1):
        sl = spec.atom_slice(k)
        rank = basis.shape[1]
        size = spec.atom_dims[k - 1]
        if 2 * rank > size:
            raise BudgetError(
                f"rank {rank} of P_{k} exceeds half of block size {size}",
                k=k, rank=rank, budget=size // 2,
            )
        subs = sub_dims[k - 1] if sub_dims is not None else (size,)
        try:
            U[sl, sl] = _block_shuffle(basis, subs)
        except BudgetError as exc:
            exc.k = k
            raise
    return U


def _triangular(spec, M, what):
    M = np.array(M)
    mask = lower_block_mask(spec)
    leak = np.max(np.abs(M[mask])) if mask.any() else 0.0
    if leak > 1e-9:
        raise CertificationError(f"{what} leaves the nest algebra (lower part {leak:.2e})")
    M[mask] = 0
    return M


def _block_norm(spec, M):
    """Operator norm of a block-diagonal matrix."""
    return max(
        linalg.operator_norm(M[spec.atom_slice(k), spec.atom_slice(k)])
        for k in range(1, spec.num_atoms + 1)
    )


def _certify(A, B, eps, tol, blocks, sub_dims, inverse_bound=None,
             capture_tol=CAPTURE_TOL, trace=None):
    spec = A.spec
    if B.spec != spec:
        raise ShapeError("A and B live on different nests")
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    tol = default_tol() if tol is None else tol
    coarse = _coarse(spec, blocks)
    n = spec.total_dim
    I = np.eye(n)

    # atom-level eps/2 lift of the diagonal
    s = eps / 2
    dA, dB = diagonal_expectation(A).entries, diagonal_expectation(B).entries
    A_lift = A.entries - dA + _lift(NestOperator(spec, dA), s)[0]
    B_lift = B.entries - dB + _lift(NestOperator(spec, dB), s)[0]

    cmask = block_diagonal_mask(coarse)
    Da = np.where(cmask, A_lift, 0)
    Db = np.where(cmask, B_lift, 0)
    Da_inv = np.zeros_like(Da)
    Db_inv = np.zeros_like(Db)
    for k in range(1, coarse.num_atoms + 1):
        sl = coarse.atom_slice(k)
        Da_inv[sl, sl] = np.linalg.inv(Da[sl, sl])
        Db_inv[sl, sl] = np.linalg.inv(Db[sl, sl])

    A0 = (A_lift - Da) @ Da_inv
    B0 = (B_lift - Db) @ Db_inv
    A0[cmask] = 0
    B0[cmask] = 0
    bases = _capture_bases(A0, B0, coarse, capture_tol)
    ranks = [b.shape[1] for b in bases]
    P = _projection_from_bases(coarse, bases)
    U = _triangular(spec, _shuffle_from_bases(coarse, bases, sub_dims), "shuffle isometry")

    Da_norm = _block_norm(coarse, Da)
    delta = (eps / 4) / Da_norm
    A_pp = _triangular(spec, A_lift + delta * (U @ Da), "A''")
    B_p = B_lift

    Pp = I - P
    Ustar = U.conj().T
    G = P / delta + Pp
    X1 = Da_inv @ (Pp @ Ustar)
    X2 = Db_inv @ (Pp - Pp @ Ustar)
    C1 = X1 @ G
    C2 = X2 @ G

    residual = linalg.operator_norm(A_pp @ C1 + B_p @ C2 - I)
    identity = linalg.operator_norm(A_pp @ X1 + B_p @ X2 - (delta * P + Pp))
    extras = {
        "identity_residual": identity,
        "Da_norm": Da_norm,
        "Da_inv_norm": _block_norm(coarse, Da_inv),
        "Db_inv_norm": _block_norm(coarse, Db_inv),
    }
    if inverse_bound is not None:
        extras["inverse_bound_A"], extras["inverse_bound_B"] = inverse_bound
        if extras["Da_inv_norm"] > inverse_bound[0] or extras["Db_inv_norm"] > inverse_bound[1]:
            raise CertificationError("megablock inverse exceeds the block-triangular bound")
    if trace is not None:
        trace.update(A_lift=A_lift, B_lift=B_lift, Da=Da, Db=Db, Da_inv=Da_inv,
                     Db_inv=Db_inv, A0=A0, B0=B0, P=P, U=U, coarse=coarse)
    # A - A'' is block diagonal for the coarse blocks, B - B' for the atoms
    cert = PerturbationCertificate(
        A_pp=NestOperator(spec, A_pp),
        B_p=NestOperator(spec, B_p),
        C1=C1,
        C2=C2,
        delta=delta,
        eps=eps,
        residual=residual,
        pert_A=_block_norm(coarse, A.entries - A_pp),
        pert_B=_block_norm(spec, B.entries - B_p),
        P_ranks=ranks,
        tol=tol,
        U=U,
        blocks=tuple(coarse.atom_dims),
        extras=extras,
    )
    if residual > tol:
        raise CertificationError(f"residual {residual:.3e} above tolerance {tol:g}", residual)
    if not (cert.pert_A < eps and cert.pert_B < eps):
        raise CertificationError("perturbation exceeds eps", residual)
    return cert


def right_invertible_pair(A, B, eps, tol=None, capture_tol=CAPTURE_TOL, trace=None,
                          require_growth=True):
    """Certificate that ``[A'' B']`` is right invertible, ``A''`` and ``B'`` within ``eps``.

    Pass a dict as ``trace`` to receive the intermediate matrices (lifted
    diagonals and their inverses, ``P``, ``U``).  With ``require_growth``
    off the growth gate is skipped and the rank budget alone decides.
    """
    k = first_growth_violation(A.spec) if require_growth else None
    if k is not None:
        n = A.spec.atom_dims[k - 1]
        raise GrowthConditionError(
            f"atom {k} has dimension {n} < 4 * {A.spec.cumulative[k - 1]}",
            k=k, rank=n, budget=4 * A.spec.cumulative[k - 1],
        )
    spec = A.spec
    return _certify(A, B, eps, tol, spec.atom_dims, None, capture_tol=capture_tol, trace=trace)


def block_inverse_bound(H, n, normA):
    """Upper bound on ``||A^{-1}||`` for an ``n``-block upper-triangular ``A``.

    Diagonal blocks must have inverses bounded by ``H``.  Splits the matrix
    as (first block | remaining ``n - 1``) and applies
    ``||B^{-1}|| <= 2h + h^2 ||B||`` recursively.
    """
    if H <= 0 or n < 1:
        raise PreconditionError("need H > 0 and n >= 1")
    L = float(H)
    for _ in range(n - 1):
        h = max(H, L)
        L = 2 * h + h * h * normA
    return L


def smallest_p(gamma, J):
    p = 1
    while (1 + gamma) ** p / p < 5 * J:
        p += 1
    return p


def megablock_plan(spec, gamma, J):
    if gamma <= 0 or J < 1:
        raise PreconditionError("need gamma > 0 and J >= 1")
    dims = spec.atom_dims
    K = len(dims)
    R = np.maximum.accumulate(dims)

    def R_at(k):
        return int(R[k - 1])

    k = 1
    while (k + 1) * J <= K:
        if R_at((k + 1) * J) < (1 + gamma) * R_at(k * J):
            raise HypothesisError(
                f"R({(k + 1) * J}) = {R_at((k + 1) * J)} < (1+gamma) R({k * J})", k=k
            )
        k += 1

    p = smallest_p(gamma, J)
    length = p * J
    m = K // length
    if m == 0:
        raise HypothesisError(f"fewer than {length} atoms: no complete megablock", k=1)
    blocks = [range(i * length + 1, (i + 1) * length + 1) for i in range(m)]
    M = [int(sum(dims[a - 1] for a in blk)) for blk in blocks]
    for k in range(2, m + 1):
        if M[k - 1] < 5 * M[k - 2] or M[k - 1] < 4 * sum(M[: k - 1]):
            raise HypothesisError(f"megablock ranks fail to grow at k = {k}", k=k)
    return MegablockPlan(gamma, J, p, blocks, M, range(m * length + 1, K + 1))


def _megablock_layout(spec, plan):
    groups = [list(blk) for blk in plan.megablocks]
    # trailing incomplete atoms join the last megablock
    groups[-1].extend(plan.tail)
    blocks = [sum(spec.atom_dims[a - 1] for a in g) for g in groups]
    subs = [tuple(spec.atom_dims[a - 1] for a in g) for g in groups]
    return blocks, subs


def right_invertible_pair_megablock(A, B, eps, gamma, J, tol=None,
                                    capture_tol=CAPTURE_TOL, trace=None):
    plan = megablock_plan(A.spec, gamma, J)
    blocks, subs = _megablock_layout(A.spec, plan)
    longest = max(len(s) for s in subs)
    H = 2 / eps
    bound = (
        block_inverse_bound(H, longest, linalg.operator_norm(A.entries) + eps),
        block_inverse_bound(H, longest, linalg.operator_norm(B.entries) + eps),
    )
    cert = _certify(A, B, eps, tol, blocks, subs, bound, capture_tol, trace)
    cert.extras.update({"p": plan.p, "gamma": gamma, "J": J, "M": list(plan.M)})
    return cert


def validate_certificate(cert, A, B, tol=None):
    """Recompute every certificate invariant from the raw matrices."""
    tol = cert.tol if tol is None else tol
    spec = cert.spec
    n = spec.total_dim
    for M in (A, B, cert.C1, cert.C2, cert.U):
        if np.shape(getattr(M, "entries", M)) != (n, n):
            raise ShapeError("certificate and operators disagree in shape")
    A = np.asarray(getattr(A, "entries", A))
    B = np.asarray(getattr(B, "entries", B))
    A_pp, B_p, U = cert.A_pp.entries, cert.B_p.entries, np.asarray(cert.U)
    I = np.eye(n)
    checks = []

    checks.append(linalg.operator_norm(A_pp @ cert.C1 + B_p @ cert.C2 - I) <= tol)
    checks.append(linalg.operator_norm(A - A_pp) < cert.eps)
    checks.append(linalg.operator_norm(B - B_p) < cert.eps)

    P = U @ U.conj().T
    Pp = I - P
    checks.append(linalg.operator_norm(P @ P - P) <= 1e-8)
    checks.append(linalg.operator_norm(P @ U @ Pp - U) <= 1e-8)

    try:
        coarse = _coarse(spec, cert.blocks)
    except ShapeError:
        return False
    cmask = block_diagonal_mask(coarse)
    checks.append(not np.any(U[~cmask]))
    ranks = []
    for k in range(1, coarse.num_atoms + 1):
        sl = coarse.atom_slice(k)
        ranks.append(linalg.numerical_rank(P[sl, sl], 1e-6))
    checks.append(ranks == list(cert.P_ranks))
    checks.append(all(2 * r <= d for r, d in zip(ranks, coarse.atom_dims)))

    # U^2 = 0, so Delta(A'') = (I + delta U) D_a inverts to D_a = (I - delta U) Delta(A'')
    Da = (I - cert.delta * U) @ np.where(cmask, A_pp, 0)
    Da_norm = linalg.operator_norm(Da)
    checks.append(0 < cert.delta < (cert.eps / 2) / Da_norm)
    return bool(all(checks))
