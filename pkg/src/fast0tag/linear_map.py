"""Two-stage linear model: per-image ranking-SVM directions, then ridge regression.

Stage 1 fits a ranking SVM to every training image's (relevant, irrelevant)
seen tags. Stage 2 regresses those directions on the image features, giving
a matrix ``A`` with ``f(x) = A x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from fast0tag import _binary
from fast0tag._parallel import ordered_map
from fast0tag.dataset import TaggedImageSet, VocabularyPartition
from fast0tag.embeddings import EmbeddingTable
from fast0tag.errors import DataError, NumericalError
from fast0tag.ranksvm import SvmOptions, train_rank_svm

TEXT_MAGIC = "fast0tag-linear"
BINARY_MAGIC = b"F0TL"


@dataclass(frozen=True)
class LinearDirectionMap:
    A: np.ndarray  # (D, Dv)
    ridge: float
    residual_rms: float

    @property
    def embed_dim(self) -> int:
        return self.A.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.A.shape[1]


@dataclass
class TwoStageReport:
    images_used: int = 0
    dropped_no_rule: list = field(default_factory=list)
    dropped_diverged: list = field(default_factory=list)
    svm_unconverged: int = 0


def fit_linear(X, W, ridge: float = 1e-6) -> LinearDirectionMap:
    """Closed-form minimizer of ``sum_m ||w_m - A x_m||^2 + ridge * ||A||_F^2``.

    Rows of ``X`` are features, rows of ``W`` are target directions. Solves
    the normal equations with a Cholesky factorization.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    if X.shape[0] != W.shape[0] or X.shape[0] < 1:
        raise DataError(f"need matching non-empty X and W, got {X.shape[0]} and {W.shape[0]} rows")
    if ridge < 0:
        raise DataError(f"ridge must be non-negative, got {ridge}")
    dv = X.shape[1]
    if ridge == 0 and np.linalg.matrix_rank(X) < dv:
        raise DataError("normal equations are rank-deficient with ridge=0; set ridge > 0")
    gram = X.T @ X + ridge * np.eye(dv)
    try:
        factor = linalg.cho_factor(gram, lower=False, check_finite=True)
    except linalg.LinAlgError:
        raise DataError("normal equations are not positive definite; increase ridge") from None
    A = linalg.cho_solve(factor, X.T @ W).T
    if not np.all(np.isfinite(A)):
        raise NumericalError("non-finite entries in regression solution")
    residual = W - X @ A.T
    rms = float(np.sqrt(np.mean(np.einsum("ij,ij->i", residual, residual))))
    return LinearDirectionMap(A, float(ridge), rms)


def apply_linear(model: LinearDirectionMap, x) -> np.ndarray:
    """``A @ x`` for one feature vector, or row-wise for a ``(M, Dv)`` batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.feature_dim:
        raise DataError(f"feature has {x.shape[-1]} components, model expects {model.feature_dim}")
    return model.A @ x if x.ndim == 1 else x @ model.A.T


def two_stage_train(dataset: TaggedImageSet, table: EmbeddingTable,
                    partition: VocabularyPartition, lam: float = 1.0, ridge: float = 1e-6,
                    svm_opts: SvmOptions = SvmOptions(), threads: int | None = 1,
                    split: str = "train"):
    """Return ``(LinearDirectionMap, TwoStageReport)``.

    Images whose seen tags are all relevant or all irrelevant have no ranking
    constraints and are dropped, as are images whose SVM diverged.
    """
    seen_index = {t: i for i, t in enumerate(partition.seen)}
    seen_vecs = table.matrix(partition.seen)
    report = TwoStageReport()
    jobs = []
    for i in dataset.split_indices(split):
        pos = [seen_index[t] for t in partition.seen if t in dataset.tags[i]]
        if not pos or len(pos) == len(seen_index):
            report.dropped_no_rule.append(dataset.ids[i])
            continue
        neg = np.setdiff1d(np.arange(len(seen_index)), pos)
        jobs.append((i, np.array(pos), neg))

    def fit(job):
        _, pos, neg = job
        try:
            return train_rank_svm(seen_vecs[pos], seen_vecs[neg], lam, svm_opts)
        except NumericalError:
            return None

    results = ordered_map(fit, jobs, threads)
    rows, targets = [], []
    for (i, _, _), res in zip(jobs, results):
        if res is None:
            report.dropped_diverged.append(dataset.ids[i])
            continue
        report.svm_unconverged += not res.converged
        rows.append(i)
        targets.append(res.w)
    if not rows:
        raise DataError("two-stage training: every training image was dropped")
    report.images_used = len(rows)
    model = fit_linear(dataset.features[rows], np.vstack(targets), ridge)
    return model, report


def save_linear_text(model: LinearDirectionMap, out) -> None:
    d, dv = model.A.shape
    out.write(f"{TEXT_MAGIC} {d} {dv} {model.ridge!r} {model.residual_rms!r}\n")
    for row in model.A:
        out.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def save_linear_binary(model: LinearDirectionMap, out) -> None:
    d, dv = model.A.shape
    out.write(BINARY_MAGIC + _binary.u32(d) + _binary.u32(dv)
              + _binary.f64(model.ridge) + _binary.f64(model.residual_rms))
    out.write(np.ascontiguousarray(model.A, dtype="<f8").tobytes())


def parse_linear_text(text: str) -> LinearDirectionMap:
    lines = text.split("\n")
    header = lines[0].split(" ")
    if header[0] != TEXT_MAGIC or len(header) != 5:
        raise DataError("not a fast0tag-linear model file")
    try:
        d, dv = int(header[1]), int(header[2])
        ridge, rms = float(header[3]), float(header[4])
        rows = [[float(v) for v in line.split(" ")] for line in lines[1:1 + d]]
    except ValueError:
        raise DataError("malformed fast0tag-linear model file") from None
    if len(rows) != d or any(len(r) != dv for r in rows):
        raise DataError("fast0tag-linear model: matrix shape does not match header")
    return LinearDirectionMap(np.array(rows, dtype=np.float64).reshape(d, dv), ridge, rms)


def parse_linear_binary(data: bytes) -> LinearDirectionMap:
    r = _binary.Reader(data, "linear model")
    if r.take(4) != BINARY_MAGIC:
        raise DataError("not a binary fast0tag-linear model")
    d, dv = r.u32(), r.u32()
    ridge, rms = r.f64(), r.f64()
    A = r.array("<f8", d * dv).reshape(d, dv)
    r.finish()
    return LinearDirectionMap(A, ridge, rms)
