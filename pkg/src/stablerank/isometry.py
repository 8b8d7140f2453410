"""Exact 0/1 isometry families: prime-power shifts, Fock-space left shifts, row isometries.

Every map here sends basis vectors to basis vectors, so it is stored as an
index map and densified to an integer matrix only on demand.  All isometry
identities are then exact integer equations.
"""

from dataclasses import dataclass, field
from itertools import product
from typing import NamedTuple

import numpy as np

from .errors import EmptyFamilyError, ShapeError, TruncationError


@dataclass(frozen=True)
class PartialMap:
    """Injective map between basis vectors of a space of dimension ``size``."""

    name: str
    mapping: dict
    size: int

    def __post_init__(self):
        if len(set(self.mapping.values())) != len(self.mapping):
            raise ShapeError(f"{self.name} is not injective on basis vectors")

    @property
    def domain(self):
        return tuple(sorted(self.mapping))

    @property
    def image(self):
        return frozenset(self.mapping.values())

    def dense(self, domain=None):
        """``size x len(domain)`` integer matrix of the map restricted to ``domain``."""
        domain = self.domain if domain is None else domain
        W = np.zeros((self.size, len(domain)), dtype=np.int64)
        for col, src in enumerate(domain):
            W[self.mapping[src], col] = 1
        return W

    def square(self):
        """The map as a ``size x size`` partial isometry."""
        W = np.zeros((self.size, self.size), dtype=np.int64)
        for src, dst in self.mapping.items():
            W[dst, src] = 1
        return W

    def adjoint(self, name=None):
        return PartialMap(name or self.name + "*", {v: k for k, v in self.mapping.items()},
                          self.size)

    def then(self, other, name=None):
        """``other`` after ``self``, defined where both steps are."""
        m = {k: other.mapping[v] for k, v in self.mapping.items() if v in other.mapping}
        return PartialMap(name or f"{other.name}{self.name}", m, self.size)


@dataclass(frozen=True)
class IsometryFamily:
    members: list
    labels: list
    meta: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.members)

    def __len__(self):
        return len(self.members)

    @property
    def codomain_dim(self):
        return len(self.labels)

    @property
    def domain_dim(self):
        dims = {len(m.mapping) for m in self.members}
        return dims.pop() if len(dims) == 1 else None

    def to_json(self):
        return {
            "labels": [list(lab) for lab in self.labels],
            "maps": [
                {"member": m.name, "from": list(self.labels[s]), "to": list(self.labels[t])}
                for m in self.members for s, t in sorted(m.mapping.items())
            ],
        }

    @classmethod
    def from_json(cls, obj):
        labels = [tuple(lab) for lab in obj["labels"]]
        index = {lab: i for i, lab in enumerate(labels)}
        maps = {}
        for entry in obj["maps"]:
            name = entry.get("member", "W")
            maps.setdefault(name, {})[index[tuple(entry["from"])]] = index[tuple(entry["to"])]
        members = [PartialMap(name, m, len(labels)) for name, m in maps.items()]
        return cls(members, labels)


def is_exact_isometry(W):
    W = np.asarray(W)
    return bool(np.array_equal(W.T @ W, np.eye(W.shape[1], dtype=W.dtype)))


def are_orthogonal(W1, W2):
    return not np.any(np.asarray(W1).T @ np.asarray(W2))


def check_family(family):
    """Exact check of ``W_i* W_j = delta_ij I`` over all member pairs."""
    mats = [m.dense() for m in family.members]
    if not all(is_exact_isometry(W) for W in mats):
        return False
    return all(are_orthogonal(mats[i], mats[j])
               for i in range(len(mats)) for j in range(i + 1, len(mats)))


def _nest_labels(atom_dims):
    return [(k, j) for k, n in enumerate(atom_dims, start=1) for j in range(1, n + 1)]


def _prime_map(name, atom_dims, target):
    """``e_{k,j} -> e_{target(k,j), 1}`` wherever the target atom exists."""
    labels = _nest_labels(atom_dims)
    index = {lab: i for i, lab in enumerate(labels)}
    K = len(atom_dims)
    mapping = {}
    for (k, j), i in index.items():
        atom = target(k, j)
        if atom <= K:
            mapping[i] = index[(atom, 1)]
    return PartialMap(name, mapping, len(labels)), labels


def prime_coisometry_pair(spec):
    """Adjoints ``U*, V*`` of the two co-isometries in the nest algebra.

    ``U* e_{k,j} = e_{2^k 3^j, 1}`` and ``V* e_{k,j} = e_{5^k 3^j, 1}``,
    kept on the basis vectors whose image atom lies inside the truncation.
    """
    dims = spec.atom_dims
    u, labels = _prime_map("U*", dims, lambda k, j: 2 ** k * 3 ** j)
    v, _ = _prime_map("V*", dims, lambda k, j: 5 ** k * 3 ** j)
    if not u.mapping or not v.mapping:
        raise EmptyFamilyError(f"{len(dims)} atoms are too few for any prime-power image")
    return IsometryFamily([u, v], labels, {"kind": "prime_coisometry"})


def prime_shift_pair(num_atoms, atom_dims):
    """Isometries ``U e_{k,j} = e_{2^j 3^k, 1}`` and ``V e_{k,j} = e_{5^j 7^k, 1}``.

    ``atom_dims`` is one dimension for every atom or a list of ``num_atoms``
    dimensions.  Atom ``k`` sits deeper in the (decreasing) nest as ``k``
    grows, so both maps are block lower-triangular in this ordering.
    """
    if np.isscalar(atom_dims):
        atom_dims = [int(atom_dims)] * num_atoms
    atom_dims = list(atom_dims)
    if len(atom_dims) != num_atoms:
        raise ShapeError("need one dimension per atom")
    u, labels = _prime_map("U", atom_dims, lambda k, j: 2 ** j * 3 ** k)
    v, _ = _prime_map("V", atom_dims, lambda k, j: 5 ** j * 7 ** k)
    if not u.mapping or not v.mapping:
        raise EmptyFamilyError(f"{num_atoms} atoms are too few for any prime-power image")
    return IsometryFamily([u, v], labels, {"kind": "prime_shift"})


class RowFamily(NamedTuple):
    Y: np.ndarray
    defect: int
    index_proxy: int
    domain: tuple
    # range(Y) is orthogonal to range(V^n U) wherever V^n U is defined
    next_orthogonal: bool


def orthogonal_row_family(U, V, n):
    """Row isometry ``Y = [U, VU, ..., V^{n-1} U]`` on the largest common domain."""
    if U.size != V.size:
        raise ShapeError("U and V must share a codomain")
    if n < 1:
        raise ShapeError("n must be at least 1")
    powers = [U]
    for _ in range(n):
        powers.append(powers[-1].then(V))
    domain = set(U.mapping)
    for W in powers[:n]:
        domain &= set(W.mapping)
    domain = tuple(sorted(domain))
    if not domain:
        raise TruncationError(f"V^i U, i < {n}, have no common domain in this truncation")
    Y = np.hstack([W.dense(domain) for W in powers[:n]])
    if not is_exact_isometry(Y):
        raise ShapeError("U and V do not generate orthogonal isometries")
    # YY* is the diagonal 0/1 projection onto the images, so rank(I - YY*) counts the rest
    covered = int(np.count_nonzero(Y.sum(axis=1)))
    defect = U.size - covered
    index_proxy = (U.size - covered) - (Y.shape[1] - covered)
    tail = powers[n]
    hit = {W.mapping[s] for W in powers[:n] for s in domain}
    next_orthogonal = not (hit & {tail.mapping[s] for s in domain if s in tail.mapping})
    return RowFamily(Y, defect, index_proxy, domain, next_orthogonal)


@dataclass(frozen=True)
class WordBasis:
    """Words over ``1..n`` of length at most ``depth`` in length-then-lex order."""

    n: int
    depth: int

    @property
    def words(self):
        return [w for length in range(self.depth + 1)
                for w in product(range(1, self.n + 1), repeat=length)]

    @property
    def index(self):
        return {w: i for i, w in enumerate(self.words)}

    def count(self, depth=None):
        d = self.depth if depth is None else depth
        if self.n == 1:
            return d + 1
        return (self.n ** (d + 1) - 1) // (self.n - 1)


def fock_left_shifts(n, depth):
    """Truncated left shifts ``L_v xi_w = xi_{vw}`` from words of length < depth."""
    if n < 1 or depth < 1:
        raise ShapeError("need n >= 1 generators and depth >= 1")
    basis = WordBasis(n, depth)
    words = basis.words
    index = basis.index
    interior = basis.count(depth - 1)
    members = []
    for v in range(1, n + 1):
        mapping = {index[w]: index[(v,) + w] for w in words[:interior]}
        members.append(PartialMap(f"L{v}", mapping, len(words)))
    return IsometryFamily(members, words, {"kind": "fock", "n": n, "depth": depth})


def cuntz_defect(family):
    """``I - sum W_i W_i*`` compressed to the common domain (the interior).

    Returns the defect as an exact integer matrix together with its rank.
    """
    domains = {m.domain for m in family.members}
    if len(domains) != 1:
        raise ShapeError("family members must share one domain")
    interior = domains.pop()
    total = np.zeros((family.codomain_dim,), dtype=np.int64)
    for m in family.members:
        for dst in m.mapping.values():
            total[dst] += 1
    # W W* is diagonal for basis-to-basis maps
    defect = np.diag(1 - total[list(interior)])
    if np.any(np.diag(defect) < 0):
        raise ShapeError("member ranges overlap; the family is not orthogonal")
    return defect, int(np.count_nonzero(np.diag(defect)))
