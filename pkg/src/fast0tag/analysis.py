"""Principal-direction experiments and the ranking-SVM based baselines.

* rank-ability: does one direction per image rank its relevant seen tags
  first, and does that direction carry over to unseen tags?
* offsets between relevant and irrelevant tag vectors, and their PCA;
* Seen2Unseen: fit a direction to any seen-tag ranking and reuse it on
  unseen tags;
* the RankSVM oracle: fit on an image's true seen tags, rank unseen tags.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fast0tag._parallel import ordered_map
from fast0tag.dataset import TaggedImageSet, VocabularyPartition
from fast0tag.embeddings import EmbeddingTable, subset
from fast0tag.errors import DataError
from fast0tag.evalkit import expected_random_ap, image_average_precision
from fast0tag.ranking import RankedTagList, score_tags
from fast0tag.ranksvm import SvmOptions, train_rank_svm

DEFAULT_LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)


@dataclass(frozen=True)
class RankabilityRow:
    embedding_label: str
    lam: float
    mean_miap_seen: float
    mean_miap_unseen: float
    rules_evaluated: int


@dataclass
class RankabilityReport:
    rows: list = field(default_factory=list)
    # Exact expected MiAP of random unseen-tag rankings over the same rules.
    random_miap_unseen: float = float("nan")

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("embedding,lambda,miap_seen,miap_unseen,rules\n")
        for r in self.rows:
            out.write(f"{r.embedding_label},{r.lam!r},{r.mean_miap_seen!r},"
                      f"{r.mean_miap_unseen!r},{r.rules_evaluated}\n")
        return out.getvalue()


@dataclass(frozen=True)
class Rule:
    image_index: int
    relevant: tuple[str, ...]    # seen tags, in seen order
    irrelevant: tuple[str, ...]
    unseen_truth: frozenset


def unique_rules(dataset: TaggedImageSet, partition: VocabularyPartition,
                 split: str = "val") -> list[Rule]:
    """One rule per distinct relevant seen-tag set, keeping the first image that induces it.

    Images whose seen tags are all relevant or all irrelevant impose no
    constraint and are left out.
    """
    unseen = frozenset(partition.unseen)
    rules, keys = [], set()
    for i in dataset.split_indices(split):
        tags = dataset.tags[i]
        pos = tuple(t for t in partition.seen if t in tags)
        if not pos or len(pos) == len(partition.seen):
            continue
        key = tuple(sorted(pos))
        if key in keys:
            continue
        keys.add(key)
        neg = tuple(t for t in partition.seen if t not in tags)
        rules.append(Rule(i, pos, neg, tags & unseen))
    return rules


def rankability_experiment(dataset: TaggedImageSet, tables: Sequence[tuple[str, EmbeddingTable]],
                           partition: VocabularyPartition,
                           lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
                           split: str = "val", svm_opts: SvmOptions = SvmOptions(),
                           threads: int | None = 1) -> RankabilityReport:
    """Fit one ranking SVM per unique rule and score it on seen and unseen tags.

    ``mean_miap_seen`` is the mean AP of the seen-tag ranking against the
    rule's own relevant tags. ``mean_miap_unseen`` applies the same direction
    to the unseen vocabulary, scored against the inducing image's unseen
    tags (rules whose image has none are left out of that mean; NaN if all
    are).
    """
    rules = unique_rules(dataset, partition, split)
    if not rules:
        raise DataError(f"no visual association rules in split {split!r}")
    report = RankabilityReport()
    with_unseen = [r for r in rules if r.unseen_truth]
    if with_unseen:
        report.random_miap_unseen = float(np.mean(
            [expected_random_ap(len(partition.unseen), len(r.unseen_truth)) for r in with_unseen]))

    for label, table in tables:
        seen_table = subset(table, partition.seen)
        unseen_table = subset(table, partition.unseen) if partition.unseen else None
        for lam in lambda_grid:
            def fit(rule):
                return train_rank_svm(table.matrix(rule.relevant), table.matrix(rule.irrelevant),
                                      lam, svm_opts).w

            directions = ordered_map(fit, rules, threads)
            seen_aps, unseen_aps = [], []
            for rule, w in zip(rules, directions):
                seen_aps.append(image_average_precision(score_tags(w, seen_table), rule.relevant))
                if rule.unseen_truth and unseen_table is not None:
                    unseen_aps.append(
                        image_average_precision(score_tags(w, unseen_table), rule.unseen_truth))
            report.rows.append(RankabilityRow(
                label, float(lam), float(np.mean(seen_aps)),
                float(np.mean(unseen_aps)) if unseen_aps else float("nan"), len(rules)))
    return report


def compute_offsets(pos_vectors, neg_vectors) -> np.ndarray:
    """All ``p - n`` offsets, relevant-major: row ``i * len(neg) + j`` is ``p_i - n_j``."""
    P = np.atleast_2d(np.asarray(pos_vectors, dtype=np.float64))
    N = np.atleast_2d(np.asarray(neg_vectors, dtype=np.float64))
    if P.size == 0 or N.size == 0:
        raise DataError("offsets need at least one relevant and one irrelevant vector")
    if P.shape[1] != N.shape[1]:
        raise DataError("relevant and irrelevant vectors differ in dimension")
    return (P[:, None, :] - N[None, :, :]).reshape(-1, P.shape[1])


@dataclass(frozen=True)
class PcaResult:
    coords: np.ndarray       # (n, k)
    components: np.ndarray   # (k, dim), orthonormal rows
    mean: np.ndarray
    variances: np.ndarray    # eigenvalues of the covariance, per component
    iterations: tuple


def pca_project(vectors, k: int, tol: float = 1e-10, max_iter: int = 10_000,
                seed: int = 0) -> PcaResult:
    """Top-``k`` principal components by power iteration with deflation.

    Each iterate is re-orthogonalized against the components already found,
    so the components stay orthonormal even when eigenvalues are close or
    the remaining variance is zero. Signs are fixed so each component's
    largest-magnitude entry is positive.
    """
    X = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    n, dim = X.shape
    if n < 2:
        raise DataError("PCA needs at least two vectors")
    if not 1 <= k <= dim:
        raise DataError(f"k must lie in [1, {dim}], got {k}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    scale = np.trace(cov)
    if scale <= 0.0:
        raise DataError("PCA input is degenerate: all vectors are identical")

    rng = np.random.default_rng(seed)
    comps, variances, iters = [], [], []
    C = cov.copy()

    def orth(v):
        for c in comps:
            v = v - (c @ v) * c
        return v

    for _ in range(k):
        v = orth(rng.standard_normal(dim))
        v /= np.linalg.norm(v)
        it = 0
        for it in range(1, max_iter + 1):
            u = orth(C @ v)
            norm = np.linalg.norm(u)
            if norm <= 1e-14 * scale:
                break  # no variance left; any orthonormal completion will do
            u /= norm
            done = np.linalg.norm(u - v) < tol
            v = u
            if done:
                break
        v = orth(v)
        v /= np.linalg.norm(v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        lam = float(v @ cov @ v)
        C = C - lam * np.outer(v, v)
        comps.append(v)
        variances.append(lam)
        iters.append(it)
    components = np.vstack(comps)
    return PcaResult(Xc @ components.T, components, mean, np.array(variances), tuple(iters))


def seen2unseen(base_ranking, table: EmbeddingTable, unseen: Sequence[str], lam: float = 1.0,
                top_k_pos: int = 5, include_seen: bool = False,
                svm_opts: SvmOptions = SvmOptions()) -> RankedTagList:
    """Re-rank unseen (and optionally seen) tags with a direction fit to a seen-tag ranking.

    The top ``top_k_pos`` tags of ``base_ranking`` are positives, the rest
    negatives.
    """
    names = tuple(base_ranking.names if isinstance(base_ranking, RankedTagList) else base_ranking)
    if not unseen:
        raise DataError("Seen2Unseen needs a non-empty unseen vocabulary")
    if not 1 <= top_k_pos < len(names):
        raise DataError(f"top_k_pos must lie in [1, {len(names) - 1}], got {top_k_pos}")
    result = train_rank_svm(table.matrix(names[:top_k_pos]), table.matrix(names[top_k_pos:]),
                            lam, svm_opts)
    candidates = tuple(names) + tuple(unseen) if include_seen else tuple(unseen)
    return score_tags(result.w, subset(table, candidates))


@dataclass
class OracleResult:
    rankings: dict
    skipped: list


def ranksvm_oracle(dataset: TaggedImageSet, table: EmbeddingTable, partition: VocabularyPartition,
                   lam: float = 1.0, split: str = "test", svm_opts: SvmOptions = SvmOptions(),
                   threads: int | None = 1) -> OracleResult:
    """Per test image, fit on its true seen-tag rule and rank the unseen tags."""
    if not partition.unseen:
        raise DataError("RankSVM oracle needs a non-empty unseen vocabulary")
    unseen_table = subset(table, partition.unseen)
    jobs, skipped = [], []
    for i in dataset.split_indices(split):
        tags = dataset.tags[i]
        pos = [t for t in partition.seen if t in tags]
        if not pos or len(pos) == len(partition.seen):
            skipped.append(dataset.ids[i])
            continue
        jobs.append((i, pos, [t for t in partition.seen if t not in tags]))

    def fit(job):
        _, pos, neg = job
        return train_rank_svm(table.matrix(pos), table.matrix(neg), lam, svm_opts).w

    directions = ordered_map(fit, jobs, threads)
    rankings = {dataset.ids[i]: score_tags(w, unseen_table) for (i, _, _), w in zip(jobs, directions)}
    return OracleResult(rankings, skipped)


def offsets_csv(pos_names, neg_names, offsets, coords=None) -> str:
    """CSV rows ``pos,neg,o1..oD`` plus ``pc1..pck`` when PCA coordinates are given."""
    out = io.StringIO()
    header = ["pos", "neg"] + [f"o{i + 1}" for i in range(offsets.shape[1])]
    if coords is not None:
        header += [f"pc{i + 1}" for i in range(coords.shape[1])]
    out.write(",".join(header) + "\n")
    pairs = [(p, n) for p in pos_names for n in neg_names]
    for r, (p, n) in enumerate(pairs):
        values = [repr(float(v)) for v in offsets[r]]
        if coords is not None:
            values += [repr(float(v)) for v in coords[r]]
        out.write(",".join([p, n] + values) + "\n")
    return out.getvalue()
