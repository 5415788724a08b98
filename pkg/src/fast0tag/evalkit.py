"""Tagging metrics: MiAP, micro-averaged top-K precision/recall/F1, random baseline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from fast0tag.errors import DataError
from fast0tag.ranking import RankedTagList


def _names(ranking) -> Sequence[str]:
    return ranking.names if isinstance(ranking, RankedTagList) else ranking


def image_average_precision(ranking, relevant) -> float:
    """Average of precision@k over the ranks k that hold a relevant tag.

    ``ranking`` is a :class:`RankedTagList` or a sequence of tag names.
    """
    names = _names(ranking)
    relevant = set(relevant)
    if not relevant:
        raise DataError("average precision is undefined for an empty relevant set")
    ranks = [k for k, name in enumerate(names, start=1) if name in relevant]
    if len(ranks) != len(relevant):
        absent = sorted(relevant.difference(names))
        raise DataError(f"relevant tags absent from ranking: {absent}")
    return sum(i / k for i, k in enumerate(ranks, start=1)) / len(ranks)


def _aligned(rankings: Mapping, truths: Mapping):
    if set(rankings) != set(truths):
        only_r = sorted(set(rankings) - set(truths))[:5]
        only_t = sorted(set(truths) - set(rankings))[:5]
        raise DataError(f"rankings and truths are not aligned by image id "
                        f"(ranking-only: {only_r}, truth-only: {only_t})")
    return [(k, rankings[k], truths[k]) for k in rankings]


def miap(rankings: Mapping, truths: Mapping) -> tuple[float, int]:
    """Mean image AP over images with at least one relevant tag.

    Returns ``(miap, skipped)`` where ``skipped`` counts images without
    relevant tags.
    """
    aps, skipped = [], 0
    for _, ranking, truth in _aligned(rankings, truths):
        if not truth:
            skipped += 1
            continue
        aps.append(image_average_precision(ranking, truth))
    if not aps:
        raise DataError("MiAP undefined: no image has a relevant tag")
    return float(sum(aps) / len(aps)), skipped


def prf_at_k(rankings: Mapping, truths: Mapping, k: int) -> tuple[float, float, float]:
    """Micro-averaged ("overall") precision, recall and F1 of the top ``k`` tags."""
    if k < 1:
        raise DataError(f"K must be positive, got {k}")
    hits = n_images = n_relevant = 0
    for image_id, ranking, truth in _aligned(rankings, truths):
        names = _names(ranking)
        if len(names) < k:
            raise DataError(f"ranking for {image_id!r} has {len(names)} entries, fewer than K={k}")
        if not truth:
            continue
        n_images += 1
        n_relevant += len(truth)
        hits += len(set(names[:k]) & set(truth))
    if n_images == 0:
        raise DataError("precision/recall undefined: no image has a relevant tag")
    p = hits / (k * n_images)
    r = hits / n_relevant
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def random_ranking(candidates: Sequence[str], seed) -> RankedTagList:
    """Uniformly random permutation; scores are ``N-1, ..., 0`` placeholders.

    ``seed`` may be an int or a ``numpy.random.Generator`` (consumed in place).
    """
    if not candidates:
        raise DataError("no candidate tags to rank")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    order = rng.permutation(len(candidates))
    n = len(candidates)
    return RankedTagList(tuple(candidates[i] for i in order),
                         np.arange(n - 1, -1, -1, dtype=np.float64))


def expected_random_ap(n: int, r: int) -> float:
    """Exact expected AP of a uniformly random ranking of ``n`` tags, ``r`` relevant.

    A relevant tag lands at rank k with probability 1/n, and the other r-1
    relevant tags fill the k-1 slots above it hypergeometrically.
    """
    if not 1 <= r <= n:
        raise DataError(f"need 1 <= r <= n, got r={r}, n={n}")
    if n == 1:
        return 1.0
    harmonic = sum(1.0 / k for k in range(1, n + 1))
    return (harmonic + (r - 1) / (n - 1) * (n - harmonic)) / n


@dataclass
class EvalReport:
    miap: float
    per_k: dict = field(default_factory=dict)
    images_scored: int = 0
    images_skipped_no_positives: int = 0

    def as_dict(self) -> dict:
        out = {"miap": self.miap}
        for k, (p, r, f1) in sorted(self.per_k.items()):
            out[f"p@{k}"] = p
            out[f"r@{k}"] = r
            out[f"f1@{k}"] = f1
        out["images_scored"] = self.images_scored
        out["images_skipped"] = self.images_skipped_no_positives
        return out

    def to_text(self) -> str:
        lines = []
        for key, value in self.as_dict().items():
            lines.append(f"{key} = {value:.6f}" if isinstance(value, float) else f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2) + "\n"


def evaluate(rankings: Mapping, truths: Mapping, ks=(3, 5)) -> EvalReport:
    value, skipped = miap(rankings, truths)
    per_k = {k: prf_at_k(rankings, truths, k) for k in ks}
    return EvalReport(value, per_k, len(rankings) - skipped, skipped)


def miap_from_scores(scores, relevant, names) -> tuple[float, int]:
    """Vectorized MiAP for a ``(M, T)`` score matrix over one shared vocabulary.

    ``relevant`` is a boolean ``(M, T)`` mask and ``names`` the ``T`` tag
    names, used for the same name tie-break as :class:`RankedTagList`.
    Agrees with :func:`miap` on the equivalent rankings.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    relevant = np.atleast_2d(np.asarray(relevant, dtype=bool))
    name_rank = np.empty(len(names), dtype=np.int64)
    name_rank[np.argsort(np.array(names, dtype=object), kind="stable")] = np.arange(len(names))
    order = np.lexsort((np.broadcast_to(name_rank, scores.shape), -scores + 0.0), axis=-1)
    rel = np.take_along_axis(relevant, order, axis=-1)
    n_rel = rel.sum(axis=1)
    keep = n_rel > 0
    if not keep.any():
        raise DataError("MiAP undefined: no image has a relevant tag")
    rel = rel[keep]
    prec = np.cumsum(rel, axis=1) / np.arange(1, rel.shape[1] + 1)
    aps = (prec * rel).sum(axis=1) / n_rel[keep]
    return float(aps.mean()), int((~keep).sum())
