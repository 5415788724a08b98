"""Synthetic tagging data with a planted linear feature-to-direction map.

Tag vectors and image features are uniform on their unit spheres. A planted
matrix ``A*`` (unit-norm rows) sends each feature to a direction; adding
isotropic noise and normalizing gives the image's true direction ``z``. The
image's relevant tags, seen and unseen alike, are those scoring at least
``margin`` above the median of ``<z, t>`` over the whole vocabulary.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from fast0tag.dataset import (
    TaggedImageSet,
    VocabularyPartition,
    write_annotations,
    write_features_binary,
    write_features_tsv,
    write_splits,
    write_tag_list,
)
from fast0tag.embeddings import EmbeddingTable, dump_embeddings
from fast0tag.errors import DataError
from fast0tag.linear_map import LinearDirectionMap, save_linear_text


@dataclass(frozen=True)
class SynthSpec:
    num_images: int = 2000
    num_seen_tags: int = 60
    num_unseen_tags: int = 20
    feature_dim: int = 32
    embed_dim: int = 32
    margin: float = 0.1
    noise_sigma: float = 0.05
    seed: int = 0
    max_retries: int = 1000

    def validate(self) -> None:
        if self.num_images < 1:
            raise DataError("num_images must be positive")
        if self.num_seen_tags < 2 or self.num_unseen_tags < 2:
            raise DataError("need at least 2 seen and 2 unseen tags")
        if self.feature_dim < 2 or self.embed_dim < 2:
            raise DataError("feature_dim and embed_dim must be at least 2")
        if not self.margin > 0:
            raise DataError(f"margin must be positive, got {self.margin}")
        if self.margin >= 2.0:
            # Unit-sphere inner products span [-1, 1], so no tag can clear median + 2.
            raise DataError(f"margin {self.margin} is infeasible: it must be below 2")
        if self.noise_sigma < 0:
            raise DataError(f"noise_sigma must be non-negative, got {self.noise_sigma}")


@dataclass(frozen=True)
class SynthData:
    table: EmbeddingTable
    dataset: TaggedImageSet
    partition: VocabularyPartition
    planted: np.ndarray        # A*, (embed_dim, feature_dim)
    directions: np.ndarray     # per-image unit direction z used for labelling


def _unit_rows(a):
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


def generate(spec: SynthSpec = SynthSpec()) -> SynthData:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    seen = tuple(f"s{i:03d}" for i in range(spec.num_seen_tags))
    unseen = tuple(f"u{i:03d}" for i in range(spec.num_unseen_tags))
    names = seen + unseen
    tag_vecs = _unit_rows(rng.standard_normal((len(names), spec.embed_dim)))
    planted = _unit_rows(rng.standard_normal((spec.embed_dim, spec.feature_dim)))

    feats, dirs, tags = [], [], []
    for m in range(spec.num_images):
        for _ in range(spec.max_retries):
            x = _unit_rows(rng.standard_normal(spec.feature_dim))
            z = planted @ x + spec.noise_sigma * rng.standard_normal(spec.embed_dim)
            z = z / np.linalg.norm(z)
            scores = tag_vecs @ z
            relevant = scores >= np.median(scores) + spec.margin
            if 0 < relevant.sum() < len(names):
                break
        else:
            raise DataError(
                f"image {m}: no valid tag set after {spec.max_retries} draws; "
                f"margin {spec.margin} is infeasible"
            )
        feats.append(x)
        dirs.append(z)
        tags.append(frozenset(n for n, r in zip(names, relevant) if r))

    n = spec.num_images
    n_train, n_val = int(round(0.6 * n)), int(round(0.2 * n))
    split = np.empty(n, dtype=object)
    perm = rng.permutation(n)
    split[perm[:n_train]] = "train"
    split[perm[n_train:n_train + n_val]] = "val"
    split[perm[n_train + n_val:]] = "test"

    dataset = TaggedImageSet(
        feature_dim=spec.feature_dim,
        ids=tuple(f"img{m:05d}" for m in range(n)),
        features=np.vstack(feats),
        tags=tuple(tags),
        splits=tuple(split.tolist()),
    )
    return SynthData(EmbeddingTable(spec.embed_dim, names, tag_vecs), dataset,
                     VocabularyPartition(seen, unseen), planted, np.vstack(dirs))


SYNTH_FILES = {
    "embeddings": "embeddings.txt",
    "features": "features.tsv",
    "annotations": "annotations.tsv",
    "splits": "splits.tsv",
    "planted_map": "planted_map.txt",
    "seen": "seen.txt",
    "unseen": "unseen.txt",
}


def write_synth(data: SynthData, outdir, binary: bool = False) -> dict:
    """Write the dataset in the regular file formats; return ``{role: path}``."""
    os.makedirs(outdir, exist_ok=True)
    files = dict(SYNTH_FILES)
    if binary:
        files["features"] = "features.bin"
    paths = {k: os.path.join(outdir, v) for k, v in files.items()}
    ds = data.dataset

    def text(role):
        return open(paths[role], "w", encoding="utf-8", newline="\n")

    with text("embeddings") as fh:
        dump_embeddings(data.table, fh)
    if binary:
        with open(paths["features"], "wb") as fh:
            write_features_binary(ds.ids, ds.features, fh)
    else:
        with text("features") as fh:
            write_features_tsv(ds.ids, ds.features, fh)
    with text("annotations") as fh:
        write_annotations(ds.ids, ds.tags, fh, order=data.table.names)
    with text("splits") as fh:
        write_splits(ds.ids, ds.splits, fh)
    with text("planted_map") as fh:
        save_linear_text(LinearDirectionMap(data.planted, 0.0, 0.0), fh)
    with text("seen") as fh:
        write_tag_list(data.partition.seen, fh)
    with text("unseen") as fh:
        write_tag_list(data.partition.unseen, fh)
    return paths
