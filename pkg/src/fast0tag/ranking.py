"""Ranked tag lists and inner-product scoring of candidate tags."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fast0tag.embeddings import EmbeddingTable
from fast0tag.errors import DataError


@dataclass(frozen=True)
class RankedTagList:
    """Tags sorted by descending score, ties broken by ascending name."""

    names: tuple[str, ...]
    scores: np.ndarray

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(zip(self.names, self.scores.tolist()))

    def top(self, k: int) -> "RankedTagList":
        return RankedTagList(self.names[:k], self.scores[:k])

    @classmethod
    def from_scores(cls, names, scores) -> "RankedTagList":
        names = tuple(names)
        scores = np.asarray(scores, dtype=np.float64)
        if len(set(names)) != len(names):
            raise DataError("duplicate tag in ranking")
        # lexsort: last key is primary. Adding 0.0 folds -0.0 into +0.0.
        order = np.lexsort((np.array(names, dtype=object), -scores + 0.0)) if names else []
        return cls(tuple(names[i] for i in order), scores[order])


def score_tags(direction, candidates: EmbeddingTable) -> RankedTagList:
    """Rank ``candidates`` by their inner product with ``direction``."""
    direction = np.asarray(direction, dtype=np.float64)
    if len(candidates) == 0:
        raise DataError("no candidate tags to score")
    if direction.shape != (candidates.dim,):
        raise DataError(
            f"direction has shape {direction.shape}, tags have dim {candidates.dim}"
        )
    return RankedTagList.from_scores(candidates.names, candidates.vectors @ direction)
