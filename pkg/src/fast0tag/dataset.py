"""Image features, tag annotations, splits, and the seen/unseen vocabulary partition."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, TextIO

import numpy as np

from fast0tag import _binary
from fast0tag.embeddings import EmbeddingTable
from fast0tag.errors import DataError

SPLITS = ("train", "val", "test")
FEATURE_MAGIC = b"F0TG"


@dataclass(frozen=True)
class TaggedImageSet:
    """Images with L2-normalized features, relevant tags and split labels.

    Items are stored column-wise: ``ids[i]``, ``features[i]``, ``tags[i]`` and
    ``splits[i]`` describe image ``i``. Order follows the features file.
    """

    feature_dim: int
    ids: tuple[str, ...]
    features: np.ndarray
    tags: tuple[frozenset, ...]
    splits: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64).reshape(len(self.ids), self.feature_dim)
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "tags", tuple(frozenset(t) for t in self.tags))
        if not (len(self.ids) == len(self.tags) == len(self.splits)):
            raise DataError("ids, tags and splits must have equal length")
        index = {}
        for i, image_id in enumerate(self.ids):
            if image_id in index:
                raise DataError(f"duplicate image id {image_id!r}")
            index[image_id] = i
        object.__setattr__(self, "_index", index)
        bad = [s for s in self.splits if s not in SPLITS]
        if bad:
            raise DataError(f"unknown split label {bad[0]!r}")

    def __len__(self):
        return len(self.ids)

    def index(self, image_id: str) -> int:
        try:
            return self._index[image_id]
        except KeyError:
            raise DataError(f"unknown image id {image_id!r}") from None

    def split_indices(self, split: str) -> list[int]:
        return [i for i, s in enumerate(self.splits) if s == split]

    def equals(self, other: "TaggedImageSet") -> bool:
        return (
            self.feature_dim == other.feature_dim
            and self.ids == other.ids
            and self.tags == other.tags
            and self.splits == other.splits
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True)
class VocabularyPartition:
    """Disjoint seen (training) and unseen (test-only) tag vocabularies.

    Construction does not validate; :func:`make_partition` and :meth:`check`
    do.
    """

    seen: tuple[str, ...]
    unseen: tuple[str, ...]

    @property
    def all_tags(self) -> tuple[str, ...]:
        return self.seen + self.unseen

    def check(self, table: EmbeddingTable | None = None) -> None:
        for label, names in (("seen", self.seen), ("unseen", self.unseen)):
            if len(set(names)) != len(names):
                dup = sorted({n for n in names if names.count(n) > 1})
                raise DataError(f"duplicate tags in {label} vocabulary: {dup}")
        overlap = [t for t in self.seen if t in set(self.unseen)]
        if overlap:
            raise DataError(f"tags in both seen and unseen vocabularies: {overlap}")
        if table is not None:
            missing = [t for t in self.all_tags if t not in table]
            if missing:
                raise DataError(f"tags not in embedding table: {missing}")


def _text_lines(source, what):
    for lineno, line in enumerate(source, start=1):
        if "\r" in line:
            raise DataError(f"{what} line {lineno}: carriage return not allowed")
        line = line.rstrip("\n")
        if not line:
            raise DataError(f"{what} line {lineno}: empty line")
        yield lineno, line


def _parse_features_tsv(text: str):
    ids, rows = [], []
    dim = None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, line in _text_lines(lines, "features"):
        fields = line.split("\t")
        if len(fields) < 2 or not fields[0]:
            raise DataError(f"features line {lineno}: malformed row")
        if dim is None:
            dim = len(fields) - 1
        elif len(fields) - 1 != dim:
            raise DataError(
                f"features line {lineno}: expected {dim} values, got {len(fields) - 1}"
            )
        try:
            rows.append([float(v) for v in fields[1:]])
        except ValueError:
            raise DataError(f"features line {lineno}: non-numeric value") from None
        ids.append(fields[0])
    if dim is None:
        raise DataError("empty features stream")
    return ids, np.array(rows, dtype=np.float64)


def _parse_features_binary(data: bytes):
    r = _binary.Reader(data, "features")
    if r.take(4) != FEATURE_MAGIC:
        raise DataError("features: bad magic bytes")
    count, dim = r.u32(), r.u32()
    ids = r.strings()
    if len(ids) != count:
        raise DataError(f"features: id table has {len(ids)} entries, header says {count}")
    if dim == 0:
        raise DataError("features: zero feature dimension")
    matrix = r.array("<f4", count * dim).reshape(count, dim)
    r.finish()
    return ids, matrix


def load_features(source: TextIO | BinaryIO | bytes | str):
    """Read ``(ids, matrix)`` from the TSV or the ``F0TG`` binary format."""
    data = source if isinstance(source, (bytes, str)) else source.read()
    if isinstance(data, bytes):
        if data[:4] == FEATURE_MAGIC:
            return _parse_features_binary(data)
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError:
            raise DataError("features: neither F0TG binary nor UTF-8 text") from None
    return _parse_features_tsv(data)


def load_normalized_features(source):
    """:func:`load_features`, then reject duplicate ids and zero rows and L2-normalize."""
    ids, matrix = load_features(source)
    known = set()
    for image_id in ids:
        if image_id in known:
            raise DataError(f"features: duplicate image id {image_id!r}")
        known.add(image_id)
    if not np.all(np.isfinite(matrix)):
        raise DataError("features: non-finite value")
    norms = np.linalg.norm(matrix, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DataError(f"features: image {ids[zero[0]]!r} has an all-zero feature vector")
    return ids, matrix / norms[:, None]


def read_annotations(source) -> dict:
    """Parse an annotations TSV on its own, without checking ids against features."""
    return _parse_annotations(source, None)


def _parse_annotations(source, known):
    tags = {}
    for lineno, line in _text_lines(source, "annotations"):
        image_id, sep, rest = line.partition("\t")
        if not sep or not image_id or "\t" in rest:
            raise DataError(f"annotations line {lineno}: expected 'id<TAB>tag,tag,...'")
        if known is not None and image_id not in known:
            raise DataError(f"annotations line {lineno}: image id {image_id!r} not in features")
        if image_id in tags:
            raise DataError(f"annotations line {lineno}: duplicate image id {image_id!r}")
        names = rest.split(",") if rest else []
        for name in names:
            if not name or any(c.isspace() for c in name):
                raise DataError(f"annotations line {lineno}: malformed tag list {rest!r}")
        tags[image_id] = frozenset(names)
    return tags


def _parse_splits(source, known):
    splits = {}
    for lineno, line in _text_lines(source, "splits"):
        fields = line.split("\t")
        if len(fields) != 2 or fields[1] not in SPLITS:
            raise DataError(f"splits line {lineno}: expected 'id<TAB>train|val|test'")
        image_id = fields[0]
        if image_id not in known:
            raise DataError(f"splits line {lineno}: image id {image_id!r} not in features")
        if image_id in splits:
            raise DataError(f"splits line {lineno}: duplicate image id {image_id!r}")
        splits[image_id] = fields[1]
    return splits


def load_dataset(features, annotations: Iterable[str], splits: Iterable[str],
                 vocabulary: Iterable[str] | None = None) -> TaggedImageSet:
    """Join features, annotations and splits into a :class:`TaggedImageSet`.

    Images without an annotation row get an empty tag set. Every image must
    have a split. Features are L2-normalized; all-zero rows are rejected.
    If ``vocabulary`` is given, every annotated tag must belong to it.
    """
    ids, matrix = load_normalized_features(features)
    known = {image_id: i for i, image_id in enumerate(ids)}

    tag_map = _parse_annotations(annotations, known)
    split_map = _parse_splits(splits, known)
    unsplit = [i for i in ids if i not in split_map]
    if unsplit:
        raise DataError(f"splits: no split assigned for image {unsplit[0]!r} "
                        f"({len(unsplit)} images missing)")
    if vocabulary is not None:
        vocab = set(vocabulary)
        for image_id in ids:
            extra = tag_map.get(image_id, frozenset()) - vocab
            if extra:
                raise DataError(f"image {image_id!r} has tags outside the vocabulary: "
                                f"{sorted(extra)}")
    return TaggedImageSet(
        feature_dim=matrix.shape[1],
        ids=tuple(ids),
        features=matrix,
        tags=tuple(tag_map.get(i, frozenset()) for i in ids),
        splits=tuple(split_map[i] for i in ids),
    )


def read_dataset(features_path, annotations_path, splits_path, vocabulary=None) -> TaggedImageSet:
    with open(features_path, "rb") as f, \
            open(annotations_path, encoding="utf-8", newline="") as a, \
            open(splits_path, encoding="utf-8", newline="") as s:
        return load_dataset(f, a, s, vocabulary)


def read_splits(path, known) -> dict:
    """``{image_id: split}`` from a splits TSV; every id must be in ``known``."""
    with open(path, encoding="utf-8", newline="") as fh:
        return _parse_splits(fh, set(known))


def derive_rule(dataset: TaggedImageSet, image_id: str, partition: VocabularyPartition):
    """Split the seen vocabulary into the image's relevant and irrelevant tags.

    Both halves keep the order of ``partition.seen``.
    """
    relevant = dataset.tags[dataset.index(image_id)]
    pos = tuple(t for t in partition.seen if t in relevant)
    neg = tuple(t for t in partition.seen if t not in relevant)
    return pos, neg


def _read_tag_list(source, what):
    names = []
    for lineno, line in _text_lines(source, what):
        if any(c.isspace() for c in line):
            raise DataError(f"{what} line {lineno}: malformed tag {line!r}")
        names.append(line)
    return tuple(names)


def make_partition(seen_file: Iterable[str], unseen_file: Iterable[str],
                   table: EmbeddingTable) -> VocabularyPartition:
    partition = VocabularyPartition(_read_tag_list(seen_file, "seen"),
                                    _read_tag_list(unseen_file, "unseen"))
    partition.check(table)
    return partition


def read_partition(seen_path, unseen_path, table) -> VocabularyPartition:
    with open(seen_path, encoding="utf-8", newline="") as s, \
            open(unseen_path, encoding="utf-8", newline="") as u:
        return make_partition(s, u, table)


def write_features_tsv(ids, matrix, out: TextIO) -> None:
    for image_id, row in zip(ids, matrix):
        out.write(image_id + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")


def write_features_binary(ids, matrix, out: BinaryIO) -> None:
    matrix = np.asarray(matrix)
    out.write(FEATURE_MAGIC)
    out.write(_binary.u32(matrix.shape[0]))
    out.write(_binary.u32(matrix.shape[1]))
    out.write(_binary.strings(list(ids)))
    out.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def write_annotations(ids, tags, out: TextIO, order: Iterable[str] | None = None) -> None:
    """Write one row per image; tags are emitted in ``order`` or sorted."""
    rank = {t: i for i, t in enumerate(order)} if order is not None else None
    for image_id, relevant in zip(ids, tags):
        names = sorted(relevant, key=rank.__getitem__) if rank else sorted(relevant)
        out.write(image_id + "\t" + ",".join(names) + "\n")


def write_splits(ids, splits, out: TextIO) -> None:
    for image_id, split in zip(ids, splits):
        out.write(f"{image_id}\t{split}\n")


def write_tag_list(names, out: TextIO) -> None:
    for name in names:
        out.write(name + "\n")
