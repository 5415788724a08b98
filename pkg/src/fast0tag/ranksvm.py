"""Primal linear ranking SVM over word vectors.

Minimizes ``lam/2 * ||w||^2 + sum_{p, n} max(0, 1 - w.p + w.n)`` over all
(relevant, irrelevant) pairs with deterministic full-batch subgradient
descent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fast0tag.errors import DataError, NumericalError


@dataclass(frozen=True)
class SvmOptions:
    max_iterations: int = 2000
    eta0: float = 1.0
    tol: float = 1e-6
    window: int = 10


@dataclass(frozen=True)
class RankingDirection:
    w: np.ndarray
    lam: float
    objective: float
    iterations: int
    converged: bool


def _as_pairs(w, pos, neg):
    w = np.asarray(w, dtype=np.float64)
    pos = np.atleast_2d(np.asarray(pos, dtype=np.float64))
    neg = np.atleast_2d(np.asarray(neg, dtype=np.float64))
    if pos.size == 0 or neg.size == 0:
        raise DataError("ranking SVM needs at least one positive and one negative vector")
    if pos.shape[1] != w.shape[0] or neg.shape[1] != w.shape[0]:
        raise DataError(
            f"dimension mismatch: w has {w.shape[0]} components, "
            f"vectors have {pos.shape[1]} / {neg.shape[1]}"
        )
    return w, pos, neg


def _hinge(w, pos, neg):
    # margins[i, j] = 1 - w.p_i + w.n_j
    return 1.0 - (pos @ w)[:, None] + (neg @ w)[None, :]


def svm_objective(w, pos, neg, lam: float) -> float:
    w, pos, neg = _as_pairs(w, pos, neg)
    margins = _hinge(w, pos, neg)
    # Pos-major summation order, fixed.
    loss = float(np.maximum(margins, 0.0).sum())
    return 0.5 * lam * float(w @ w) + loss


def violated_constraints(w, pos, neg) -> int:
    """Number of pairs with ``w.p <= w.n``; ties count as violations."""
    w, pos, neg = _as_pairs(w, pos, neg)
    return int(np.count_nonzero((pos @ w)[:, None] <= (neg @ w)[None, :]))


def train_rank_svm(pos, neg, lam: float, opts: SvmOptions = SvmOptions()) -> RankingDirection:
    """Fit a ranking direction with subgradient steps ``eta0 / (1 + lam*eta0*t)``.

    Starts from ``w = 0`` and returns the best iterate seen, so the result
    never scores worse than the zero vector. ``converged`` is set when the
    best objective improved by less than ``opts.tol`` (relative) over the last
    ``opts.window`` iterations.
    """
    if lam <= 0:
        raise DataError(f"lambda must be positive, got {lam}")
    dim = np.atleast_2d(np.asarray(pos)).shape[-1]
    w, pos, neg = _as_pairs(np.zeros(dim), pos, neg)

    # Stacked so that one matvec scores every tag: s[:k] relevant, s[k:] irrelevant.
    stacked = np.vstack([pos, neg])
    k = len(pos)
    s = stacked @ w
    margins = 1.0 - s[:k, None] + s[None, k:]
    best_w = w.copy()
    best_obj = float(np.maximum(margins, 0.0).sum())
    history = [best_obj]
    converged = False
    t = 0
    coef = np.empty(len(stacked))
    for t in range(1, opts.max_iterations + 1):
        active = margins > 0.0
        coef[:k] = -active.sum(axis=1)
        coef[k:] = active.sum(axis=0)
        grad = lam * w + coef @ stacked
        eta = opts.eta0 / (1.0 + lam * opts.eta0 * (t - 1))
        w = w - eta * grad
        s = stacked @ w
        margins = 1.0 - s[:k, None] + s[None, k:]
        obj = 0.5 * lam * float(w @ w) + float(np.maximum(margins, 0.0).sum())
        if not np.isfinite(obj):
            raise NumericalError(
                f"ranking SVM diverged at iteration {t} (objective {obj}); reduce eta0"
            )
        if obj < best_obj:
            best_obj, best_w = obj, w
        history.append(best_obj)
        if best_obj == 0.0:
            converged = True
            break
        # Stagnation at the starting point means overshooting steps, not convergence.
        if t >= opts.window and best_obj < history[0]:
            ref = history[t - opts.window]
            if (ref - best_obj) <= opts.tol * ref:
                converged = True
                break
    return RankingDirection(best_w, float(lam), best_obj, t, converged)
