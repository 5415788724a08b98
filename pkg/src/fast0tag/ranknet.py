"""Neural mapping from image features to a ranking direction, trained with RankNet.

Network: two ReLU layers and a linear output layer, with inverted dropout on
the second hidden activation. The per-image loss sums
``log(1 + exp(<f, n> - <f, p>))`` over every (relevant p, irrelevant n) pair
and is weighted by ``1 / (|Y| |Ybar|)`` unless that normalization is
switched off. Forward and backward passes are written out by hand.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from fast0tag import _binary
from fast0tag.dataset import TaggedImageSet, VocabularyPartition
from fast0tag.embeddings import EmbeddingTable
from fast0tag.errors import DataError, NumericalError
from fast0tag.evalkit import miap_from_scores

log = logging.getLogger(__name__)

LAYERS = ("W1", "b1", "W2", "b2", "W3", "b3")
TEXT_MAGIC = "fast0tag-net"
BINARY_MAGIC = b"F0TN"


@dataclass
class MlpParams:
    W1: np.ndarray  # (H1, Dv)
    b1: np.ndarray
    W2: np.ndarray  # (H2, H1)
    b2: np.ndarray
    W3: np.ndarray  # (D, H2)
    b3: np.ndarray
    # Bookkeeping carried into the model file header.
    dropout_rate: float = 0.0
    seed: int = 0

    @property
    def shape(self) -> tuple[int, int, int, int]:
        """``(Dv, H1, H2, D)``."""
        return self.W1.shape[1], self.W1.shape[0], self.W2.shape[0], self.W3.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.W3.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in LAYERS]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        return replace(self, **dict(zip(LAYERS, arrays)))

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def validate(self) -> None:
        dv, h1, h2, d = self.shape
        expected = [(h1, dv), (h1,), (h2, h1), (h2,), (d, h2), (d,)]
        for name, shape in zip(LAYERS, expected):
            if getattr(self, name).shape != shape:
                raise DataError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not self.all_finite():
            raise NumericalError("non-finite network parameter")


def init_params(dv: int, h1: int, h2: int, d: int, rng: np.random.Generator) -> MlpParams:
    """Scaled-uniform weights ``U(+-sqrt(6 / (fan_in + fan_out)))``, zero biases."""
    def uniform(fan_out, fan_in):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_out, fan_in))

    return MlpParams(uniform(h1, dv), np.zeros(h1), uniform(h2, h1), np.zeros(h2),
                     uniform(d, h2), np.zeros(d))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1000
    learning_rate: float = 1e-2
    max_epochs: int = 100
    patience: int = 10
    dropout_rate: float = 0.30
    normalize_per_image: bool = True
    seed: int = 0
    hidden_sizes: tuple[int, int] | None = None  # None -> (max(Dv, D),) * 2

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 0:
            raise DataError("batch_size and patience must be positive, max_epochs non-negative")
        if not self.learning_rate > 0:
            raise DataError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise DataError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")


def forward(params: MlpParams, x, mode: str = "eval", mask_source: np.random.Generator | None = None,
            dropout_rate: float = 0.0, return_cache: bool = False):
    """Map features to directions.

    ``x`` is one feature vector or a ``(B, Dv)`` batch. In ``"train"`` mode
    with a positive ``dropout_rate``, units of the second hidden layer are
    dropped using ``mask_source`` and survivors scaled by ``1/(1-rate)``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != params.feature_dim:
        raise DataError(f"feature has {X.shape[1]} components, network expects {params.feature_dim}")
    z1 = X @ params.W1.T + params.b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params.W2.T + params.b2
    h2 = np.maximum(z2, 0.0)
    mask = None
    if mode == "train" and dropout_rate > 0.0:
        if mask_source is None:
            raise DataError("train-mode forward with dropout needs a mask source")
        mask = (mask_source.random(h2.shape) >= dropout_rate) / (1.0 - dropout_rate)
        h2 = h2 * mask
    elif mode not in ("train", "eval"):
        raise DataError(f"unknown mode {mode!r}")
    out = h2 @ params.W3.T + params.b3
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite activation in forward pass")
    result = out[0] if single else out
    if return_cache:
        return result, (X, z1, h1, z2, h2, mask)
    return result


def _softplus(v):
    # log(1 + e^v) without overflow
    return np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))


def _sigmoid(v):
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _pairs(direction, pos, neg):
    pos = np.atleast_2d(np.asarray(pos, dtype=np.float64))
    neg = np.atleast_2d(np.asarray(neg, dtype=np.float64))
    if pos.size == 0 or neg.size == 0:
        raise DataError("RankNet loss needs at least one relevant and one irrelevant tag")
    # violation[i, j] = <f, n_j> - <f, p_i>
    return pos, neg, (neg @ direction)[None, :] - (pos @ direction)[:, None]


def per_image_loss(direction, pos_vectors, neg_vectors) -> float:
    """Unweighted RankNet loss of one image over all (relevant, irrelevant) pairs."""
    _, _, violation = _pairs(np.asarray(direction, dtype=np.float64), pos_vectors, neg_vectors)
    return float(_softplus(violation).sum())


def _image_weight(n_pos, n_neg, config: TrainConfig) -> float:
    return 1.0 / (n_pos * n_neg) if config.normalize_per_image else 1.0


def loss_and_gradient(params: MlpParams, batch, config: TrainConfig,
                      mask_source: np.random.Generator | None = None, need_grad: bool = True):
    """Weighted batch loss and its exact gradient with respect to every layer.

    ``batch`` is a sequence of ``(x, pos_vectors, neg_vectors)``. Without a
    ``mask_source`` the network runs in eval mode (no dropout).
    """
    if not batch:
        raise DataError("empty batch")
    X = np.vstack([np.asarray(item[0], dtype=np.float64) for item in batch])
    mode = "train" if mask_source is not None else "eval"
    F, (X, z1, h1, z2, h2, mask) = forward(params, X, mode, mask_source,
                                           config.dropout_rate, return_cache=True)
    total = 0.0
    upstream = np.zeros_like(F)
    for m, (_, pos, neg) in enumerate(batch):
        pos, neg, violation = _pairs(F[m], pos, neg)
        weight = _image_weight(len(pos), len(neg), config)
        total += weight * float(_softplus(violation).sum())
        if need_grad:
            s = _sigmoid(violation)
            # d loss / d f = sum_ij s_ij (n_j - p_i)
            upstream[m] = weight * (s.sum(axis=0) @ neg - s.sum(axis=1) @ pos)
    if not need_grad:
        return total, None

    gW3 = upstream.T @ h2
    gb3 = upstream.sum(axis=0)
    g = upstream @ params.W3
    if mask is not None:
        g = g * mask
    g = g * (z2 > 0)
    gW2 = g.T @ h1
    gb2 = g.sum(axis=0)
    g = (g @ params.W2) * (z1 > 0)
    gW1 = g.T @ X
    gb1 = g.sum(axis=0)
    return total, params.with_arrays([gW1, gb1, gW2, gb2, gW3, gb3])


def batch_loss(params: MlpParams, batch, config: TrainConfig,
               mask_source: np.random.Generator | None = None) -> float:
    return loss_and_gradient(params, batch, config, mask_source, need_grad=False)[0]


def gradient(params: MlpParams, batch, config: TrainConfig,
             mask_source: np.random.Generator | None = None) -> MlpParams:
    return loss_and_gradient(params, batch, config, mask_source)[1]


@dataclass
class TrainLog:
    normalize_per_image: bool
    rows: list = field(default_factory=list)  # (epoch, train_loss, val_miap, best_so_far)
    best_epoch: int = 0
    stopped_early: bool = False

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_miap,best_so_far"]
        lines += [f"{e},{loss!r},{v!r},{b!r}" for e, loss, v, b in self.rows]
        return "\n".join(lines) + "\n"


def _rules(dataset, indices, seen_index):
    """``(image index, relevant seen positions, irrelevant seen positions)``."""
    all_pos = np.arange(len(seen_index))
    out = []
    for i in indices:
        pos = np.array(sorted(seen_index[t] for t in dataset.tags[i] if t in seen_index),
                       dtype=np.int64)
        if 0 < len(pos) < len(seen_index):
            out.append((i, pos, np.setdiff1d(all_pos, pos)))
    return out


def train(dataset: TaggedImageSet, table: EmbeddingTable, partition: VocabularyPartition,
          config: TrainConfig = TrainConfig(),
          on_epoch: Callable[[tuple], None] | None = None) -> tuple[MlpParams, TrainLog]:
    """Mini-batch gradient descent with early stopping on validation MiAP.

    Training images with no relevant or no irrelevant seen tag carry no
    ranking constraint and are skipped. Validation MiAP ranks the seen tags
    in eval mode. Returns the parameters of the best validation epoch.
    """
    seen = partition.seen
    seen_index = {t: i for i, t in enumerate(seen)}
    S = table.matrix(seen)
    train_rules = _rules(dataset, dataset.split_indices("train"), seen_index)
    if not train_rules:
        raise DataError("no trainable images: every training image lacks a ranking constraint")
    val_idx = dataset.split_indices("val")
    if not val_idx:
        raise DataError("validation split is empty; early stopping needs it")
    val_X = dataset.features[val_idx]
    val_rel = np.array([[t in dataset.tags[i] for t in seen] for i in val_idx], dtype=bool)

    dv, d = dataset.feature_dim, table.dim
    h1, h2 = config.hidden_sizes or (max(dv, d), max(dv, d))
    rng = np.random.default_rng(config.seed)
    params = init_params(dv, h1, h2, d, rng)
    params.dropout_rate, params.seed = config.dropout_rate, config.seed
    best = params.copy()
    history = TrainLog(normalize_per_image=config.normalize_per_image)
    best_val, since_best = -np.inf, 0
    log.info("training ranknet: %d images, hidden=(%d, %d), normalize_per_image=%s",
             len(train_rules), h1, h2, config.normalize_per_image)

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_rules))
        epoch_loss = 0.0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [(dataset.features[i], S[pos], S[neg])
                     for i, pos, neg in (train_rules[j] for j in order[start:start + config.batch_size])]
            loss, grad = loss_and_gradient(params, batch, config, rng)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}, batch {b}")
            params = params.with_arrays([p - config.learning_rate * g
                                         for p, g in zip(params.arrays(), grad.arrays())])
            if not params.all_finite():
                raise NumericalError(f"non-finite parameters after epoch {epoch}, batch {b}")
            epoch_loss += loss
        val_scores = forward(params, val_X) @ S.T
        val_miap, _ = miap_from_scores(val_scores, val_rel, seen)
        if val_miap > best_val:
            best_val, best, since_best = val_miap, params.copy(), 0
            history.best_epoch = epoch
        else:
            since_best += 1
        row = (epoch, epoch_loss, val_miap, best_val)
        history.rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if since_best >= config.patience:
            history.stopped_early = True
            break
    return best, history


def save_net_text(params: MlpParams, out) -> None:
    dv, h1, h2, d = params.shape
    out.write(f"{TEXT_MAGIC} {dv} {h1} {h2} {d} {params.dropout_rate!r} {params.seed}\n")
    for name in LAYERS:
        arr = np.atleast_2d(getattr(params, name))
        for row in arr:
            out.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def save_net_binary(params: MlpParams, out) -> None:
    dv, h1, h2, d = params.shape
    out.write(BINARY_MAGIC + b"".join(_binary.u32(v) for v in (dv, h1, h2, d))
              + _binary.f64(params.dropout_rate) + struct.pack("<q", params.seed))
    for a in params.arrays():
        out.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _layer_shapes(dv, h1, h2, d):
    return [(h1, dv), (h1,), (h2, h1), (h2,), (d, h2), (d,)]


def parse_net_text(text: str) -> MlpParams:
    lines = text.split("\n")
    header = lines[0].split(" ")
    if header[0] != TEXT_MAGIC or len(header) != 7:
        raise DataError("not a fast0tag-net model file")
    try:
        dv, h1, h2, d = (int(v) for v in header[1:5])
        rate, seed = float(header[5]), int(header[6])
        arrays, pos = [], 1
        for shape in _layer_shapes(dv, h1, h2, d):
            n_rows = shape[0] if len(shape) == 2 else 1
            rows = [[float(v) for v in line.split(" ")] for line in lines[pos:pos + n_rows]]
            pos += n_rows
            arrays.append(np.array(rows, dtype=np.float64).reshape(shape))
    except ValueError:
        raise DataError("malformed fast0tag-net model file") from None
    params = MlpParams(*arrays, dropout_rate=rate, seed=seed)
    params.validate()
    return params


def parse_net_binary(data: bytes) -> MlpParams:
    r = _binary.Reader(data, "net model")
    if r.take(4) != BINARY_MAGIC:
        raise DataError("not a binary fast0tag-net model")
    dv, h1, h2, d = (r.u32() for _ in range(4))
    rate = r.f64()
    seed = struct.unpack("<q", r.take(8))[0]
    arrays = [r.array("<f8", int(np.prod(s))).reshape(s) for s in _layer_shapes(dv, h1, h2, d)]
    r.finish()
    params = MlpParams(*arrays, dropout_rate=rate, seed=seed)
    params.validate()
    return params
