"""Ranked tag lists from a learned direction map under the three tagging protocols.

``conventional`` ranks the seen tags, ``zero_shot`` the unseen tags, and
``seen_unseen`` their union.
"""

from __future__ import annotations

from typing import Sequence, TextIO

import numpy as np

from fast0tag.dataset import VocabularyPartition
from fast0tag.embeddings import EmbeddingTable, subset
from fast0tag.errors import DataError
from fast0tag.linear_map import (
    BINARY_MAGIC as LINEAR_BINARY,
    TEXT_MAGIC as LINEAR_TEXT,
    LinearDirectionMap,
    apply_linear,
    parse_linear_binary,
    parse_linear_text,
)
from fast0tag.ranking import RankedTagList, score_tags
from fast0tag.ranknet import (
    BINARY_MAGIC as NET_BINARY,
    TEXT_MAGIC as NET_TEXT,
    MlpParams,
    forward,
    parse_net_binary,
    parse_net_text,
)

__all__ = ["RankedTagList", "score_tags", "tag_image", "tag_images", "candidate_names",
           "directions", "read_model", "write_predictions", "read_predictions"]

SCENARIOS = {
    "conventional": "conventional",
    "zero_shot": "zero_shot",
    "zeroshot": "zero_shot",
    "seen_unseen": "seen_unseen",
    "mixed": "seen_unseen",
}


def candidate_names(partition: VocabularyPartition, scenario: str) -> tuple[str, ...]:
    try:
        scenario = SCENARIOS[scenario]
    except KeyError:
        raise DataError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}") from None
    names = {"conventional": partition.seen, "zero_shot": partition.unseen,
             "seen_unseen": partition.seen + partition.unseen}[scenario]
    if not names:
        raise DataError(f"scenario {scenario!r} has an empty candidate vocabulary")
    return names


def directions(model, X) -> np.ndarray:
    """Directions for one feature vector or a ``(M, Dv)`` batch."""
    if isinstance(model, LinearDirectionMap):
        return apply_linear(model, X)
    if isinstance(model, MlpParams):
        return forward(model, X, mode="eval")
    raise DataError(f"unsupported model type {type(model).__name__}")


def _check_dims(model, table):
    if model.embed_dim != table.dim:
        raise DataError(f"model outputs {model.embed_dim}-d directions, embeddings are {table.dim}-d")


def tag_image(model, x, table: EmbeddingTable, partition: VocabularyPartition,
              scenario: str) -> RankedTagList:
    _check_dims(model, table)
    candidates = subset(table, candidate_names(partition, scenario))
    return score_tags(directions(model, x), candidates)


def tag_images(model, X, table: EmbeddingTable, partition: VocabularyPartition,
               scenario: str) -> list[RankedTagList]:
    """Batched :func:`tag_image`; one ranking per row of ``X``."""
    _check_dims(model, table)
    candidates = subset(table, candidate_names(partition, scenario))
    F = directions(model, np.atleast_2d(X))
    return [score_tags(f, candidates) for f in F]


def read_model(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] == LINEAR_BINARY:
        return parse_linear_binary(data)
    if data[:4] == NET_BINARY:
        return parse_net_binary(data)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise DataError(f"{path}: unrecognized model file") from None
    first = text.split(" ", 1)[0]
    if first == LINEAR_TEXT:
        return parse_linear_text(text)
    if first == NET_TEXT:
        return parse_net_text(text)
    raise DataError(f"{path}: unrecognized model file")


def write_predictions(rows, out: TextIO, top: int | None = None) -> None:
    """Write ``image_id<TAB>tag:score,...`` rows, scores at 6 significant digits."""
    for image_id, ranking in rows:
        entries = list(ranking)[:top] if top else list(ranking)
        out.write(image_id + "\t" + ",".join(f"{t}:{s:.6g}" for t, s in entries) + "\n")


def read_predictions(source) -> dict[str, tuple[str, ...]]:
    """Parse a predictions TSV into ``{image_id: ranked tag names}`` (file order kept)."""
    out: dict[str, tuple[str, ...]] = {}
    for lineno, line in enumerate(source, start=1):
        if "\r" in line:
            raise DataError(f"predictions line {lineno}: carriage return not allowed")
        line = line.rstrip("\n")
        image_id, sep, rest = line.partition("\t")
        if not sep or not image_id:
            raise DataError(f"predictions line {lineno}: expected 'id<TAB>tag:score,...'")
        if image_id in out:
            raise DataError(f"predictions line {lineno}: duplicate image id {image_id!r}")
        names = []
        for entry in rest.split(",") if rest else []:
            tag, colon, score = entry.rpartition(":")
            if not colon or not tag:
                raise DataError(f"predictions line {lineno}: malformed entry {entry!r}")
            try:
                float(score)
            except ValueError:
                raise DataError(f"predictions line {lineno}: bad score in {entry!r}") from None
            names.append(tag)
        if len(set(names)) != len(names):
            raise DataError(f"predictions line {lineno}: duplicate tag in ranking")
        out[image_id] = tuple(names)
    return out
