"""Truncated nests and block upper-triangular operators.

A nest of order type omega is truncated to finitely many atoms with
dimensions ``n_1, ..., n_K``.  Coordinates are ordered atom by atom, so the
nest algebra is the set of block upper-triangular ``N x N`` matrices.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import PreconditionError, ShapeError


@dataclass(frozen=True)
class NestSpec:
    atom_dims: tuple

    def __post_init__(self):
        dims = tuple(int(n) for n in self.atom_dims)
        if not dims:
            raise PreconditionError("a nest needs at least one atom")
        if any(n < 1 for n in dims):
            raise PreconditionError(f"atom dimensions must be positive, got {dims}")
        object.__setattr__(self, "atom_dims", dims)

    @classmethod
    def from_dims(cls, dims):
        return cls(tuple(dims))

    @property
    def num_atoms(self):
        return len(self.atom_dims)

    @cached_property
    def cumulative(self):
        """Prefix sums ``d_0 = 0, d_1, ..., d_K``."""
        return tuple(int(c) for c in np.concatenate([[0], np.cumsum(self.atom_dims)]))

    @property
    def total_dim(self):
        return self.cumulative[-1]

    def atom_slice(self, k):
        """Coordinates of atom ``k`` (1-based), i.e. ``(d_{k-1}, d_k]``."""
        if not 1 <= k <= self.num_atoms:
            raise IndexError(f"atom index {k} outside 1..{self.num_atoms}")
        return slice(self.cumulative[k - 1], self.cumulative[k])

    def atom_of(self, index):
        """1-based atom containing the 0-based coordinate ``index``."""
        return int(np.searchsorted(self.cumulative, index, side="right"))

    def to_json(self):
        return {"atom_dims": list(self.atom_dims)}

    @classmethod
    def from_json(cls, obj):
        if set(obj) != {"atom_dims"}:
            raise PreconditionError(f"unexpected nest fields: {sorted(obj)}")
        return cls(tuple(obj["atom_dims"]))


def lower_block_mask(spec):
    """Boolean mask of the strictly block-lower part."""
    atom = np.repeat(np.arange(spec.num_atoms), spec.atom_dims)
    return atom[:, None] > atom[None, :]


def block_diagonal_mask(spec):
    atom = np.repeat(np.arange(spec.num_atoms), spec.atom_dims)
    return atom[:, None] == atom[None, :]


@dataclass(frozen=True, eq=False)
class NestOperator:
    """A member of the truncated nest algebra.

    The strictly block-lower part is stored but must be exactly zero.
    """

    spec: NestSpec
    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=complex)
        n = self.spec.total_dim
        if a.shape != (n, n):
            raise ShapeError(f"expected {n}x{n} entries, got {a.shape}")
        if np.any(a[lower_block_mask(self.spec)] != 0):
            raise PreconditionError("operator is not block upper-triangular")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    def block(self, i, j):
        return self.entries[self.spec.atom_slice(i), self.spec.atom_slice(j)]

    def __matmul__(self, other):
        if isinstance(other, NestOperator):
            if other.spec != self.spec:
                raise ShapeError("operators live on different nests")
            return NestOperator(self.spec, _clean(self.spec, self.entries @ other.entries))
        return self.entries @ other

    def to_json(self):
        return {"spec": self.spec.to_json(), **matrix_to_json(self.entries)}

    @classmethod
    def from_json(cls, obj):
        return cls(NestSpec.from_json(obj["spec"]), matrix_from_json(obj))


def _clean(spec, a):
    a = np.array(a, dtype=complex)
    a[lower_block_mask(spec)] = 0
    return a


def matrix_to_json(a):
    a = np.asarray(a, dtype=complex)
    return {"re": a.real.tolist(), "im": a.imag.tolist()}


def matrix_from_json(obj):
    re = np.asarray(obj["re"], dtype=float)
    im = np.asarray(obj["im"], dtype=float)
    if re.shape != im.shape:
        raise ShapeError("real and imaginary parts differ in shape")
    return re + 1j * im


def validate_growth(spec):
    """True iff ``n_k >= 4 * sum_{i<k} n_i`` for every ``k >= 2``."""
    return first_growth_violation(spec) is None


def first_growth_violation(spec):
    for k in range(2, spec.num_atoms + 1):
        if spec.atom_dims[k - 1] < 4 * spec.cumulative[k - 1]:
            return k
    return None


def atom_projection(spec, k):
    p = np.zeros((spec.total_dim, spec.total_dim), dtype=complex)
    s = spec.atom_slice(k)
    p[s, s] = np.eye(s.stop - s.start)
    return NestOperator(spec, p)


def diagonal_expectation(T):
    """Block-diagonal part ``sum_k E_k T E_k``."""
    d = np.where(block_diagonal_mask(T.spec), T.entries, 0)
    return NestOperator(T.spec, d)


def is_in_nest_algebra(T, spec, tol=0.0):
    T = np.asarray(T)
    n = spec.total_dim
    if T.shape != (n, n):
        raise ShapeError(f"expected {n}x{n} matrix, got {T.shape}")
    lower = np.abs(T[lower_block_mask(spec)])
    return bool(lower.size == 0 or lower.max() <= tol)


def random_member(spec, seed, norm_bound=1.0):
    """Seeded random element of the nest algebra with ``||T|| <= norm_bound``."""
    if norm_bound <= 0:
        raise PreconditionError("norm_bound must be positive")
    rng = np.random.default_rng(seed)
    n = spec.total_dim
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    a[lower_block_mask(spec)] = 0
    norm = np.linalg.norm(a, 2)
    # rescale slightly inside the bound so roundoff in the norm cannot exceed it
    a *= norm_bound * (1 - 1e-12) / norm
    return NestOperator(spec, a)


def semiinvariant_compression(T, k):
    """Compression of ``T`` to the k-th atom, a unital homomorphism on T(N)."""
    return np.array(T.block(k, k))
