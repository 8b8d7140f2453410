"""Exception taxonomy shared by the library and the command-line front end."""


class StableRankError(Exception):
    """Base class; ``kind`` is the stable identifier written to error JSON."""

    kind = "error"

    def details(self):
        return {}


class PreconditionError(StableRankError, ValueError):
    kind = "precondition"


class ShapeError(StableRankError, ValueError):
    kind = "shape"


class BudgetError(StableRankError):
    """A rank-capture projection does not fit in half of its block."""

    kind = "budget"

    def __init__(self, message, k=None, rank=None, budget=None):
        super().__init__(message)
        self.k = k
        self.rank = rank
        self.budget = budget

    def details(self):
        return {"k": self.k, "rank": self.rank, "budget": self.budget}


class GrowthConditionError(BudgetError):
    """Atom dimensions violate n_k >= 4 * sum_{i<k} n_i."""

    kind = "growth"


class HypothesisError(StableRankError):
    """Megablock growth hypothesis fails; ``k`` is the first violating window."""

    kind = "hypothesis"

    def __init__(self, message, k=None):
        super().__init__(message)
        self.k = k

    def details(self):
        return {"k": self.k}


class CertificationError(StableRankError):
    kind = "certification"

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual

    def details(self):
        return {"residual": self.residual}


class SingularityError(StableRankError, ArithmeticError):
    kind = "singularity"


class ContourCollisionError(SingularityError):
    kind = "contour_collision"


class ConditioningError(StableRankError):
    kind = "conditioning"


class BlockStructureError(StableRankError):
    kind = "block_structure"


class EmptyFamilyError(StableRankError):
    kind = "empty_family"


class TruncationError(StableRankError):
    kind = "truncation"
