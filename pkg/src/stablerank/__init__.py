"""Finite witnesses for stable-rank constructions in nest and free semigroup algebras."""

from .errors import StableRankError
from .nest import NestOperator, NestSpec

__all__ = ["NestOperator", "NestSpec", "StableRankError"]
__version__ = "0.1.0"
