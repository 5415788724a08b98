"""Word-embedding tables: GloVe-style text loading, L2 normalization, subsetting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from fast0tag.errors import DataError


@dataclass(frozen=True)
class EmbeddingTable:
    """Ordered mapping from tag name to a ``dim``-dimensional float64 vector.

    ``vectors[i]`` belongs to ``names[i]``. The array is marked read-only so a
    table can be shared freely.
    """

    dim: int
    names: tuple[str, ...]
    vectors: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64).reshape(len(self.names), self.dim)
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "names", tuple(self.names))
        if self.dim < 1:
            raise DataError(f"embedding dim must be positive, got {self.dim}")
        index = {}
        for i, name in enumerate(self.names):
            if name in index:
                raise DataError(f"duplicate token {name!r}")
            index[name] = i
        object.__setattr__(self, "_index", index)
        if not np.all(np.isfinite(vectors)):
            bad = self.names[int(np.flatnonzero(~np.isfinite(vectors).all(axis=1))[0])]
            raise DataError(f"non-finite component in vector for {bad!r}")

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self._index

    def __iter__(self):
        return iter(self.names)

    def index(self, name: str) -> int:
        return self._index[name]

    def vector(self, name: str) -> np.ndarray:
        try:
            return self.vectors[self._index[name]]
        except KeyError:
            raise DataError(f"tag {name!r} not in embedding table") from None

    def matrix(self, names: Iterable[str]) -> np.ndarray:
        """Stack the vectors for ``names`` into a ``(len(names), dim)`` array."""
        names = list(names)
        missing = [n for n in names if n not in self._index]
        if missing:
            raise DataError(f"tags not in embedding table: {missing}")
        if not names:
            return np.zeros((0, self.dim))
        return self.vectors[[self._index[n] for n in names]]


def load_embeddings(source: TextIO | Iterable[str]) -> EmbeddingTable:
    """Parse ``token v1 ... vD`` lines; the first line fixes ``D``.

    Vectors are returned as read, not normalized. Open files with
    ``newline=""`` so that stray carriage returns reach the parser and are
    rejected instead of being silently translated.
    """
    names: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    dim = None
    for lineno, line in enumerate(source, start=1):
        if "\r" in line:
            raise DataError(f"line {lineno}: carriage return not allowed")
        line = line[:-1] if line.endswith("\n") else line
        fields = line.split(" ")
        token = fields[0]
        if not token or any(c.isspace() for c in token):
            raise DataError(f"line {lineno}: missing or malformed token")
        if len(fields) < 2:
            raise DataError(f"line {lineno}: token {token!r} has no vector")
        if dim is None:
            dim = len(fields) - 1
        elif len(fields) - 1 != dim:
            raise DataError(
                f"line {lineno}: dimension mismatch for {token!r}: "
                f"expected {dim}, got {len(fields) - 1}"
            )
        if token in seen:
            raise DataError(f"line {lineno}: duplicate token {token!r}")
        try:
            vec = np.array([float(v) for v in fields[1:]], dtype=np.float64)
        except ValueError:
            raise DataError(f"line {lineno}: non-numeric field for {token!r}") from None
        if not np.all(np.isfinite(vec)):
            raise DataError(f"line {lineno}: non-finite value for {token!r}")
        seen.add(token)
        names.append(token)
        rows.append(vec)
    if dim is None:
        raise DataError("empty embedding stream")
    return EmbeddingTable(dim, tuple(names), np.vstack(rows))


def read_embeddings(path) -> EmbeddingTable:
    with open(path, encoding="utf-8", newline="") as fh:
        return load_embeddings(fh)


def dump_embeddings(table: EmbeddingTable, out: TextIO) -> None:
    # repr() is the shortest string that round-trips a float64 exactly.
    for name, vec in zip(table.names, table.vectors):
        out.write(name + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def normalize(table: EmbeddingTable) -> EmbeddingTable:
    """Divide every vector by its L2 norm."""
    norms = np.sqrt(np.einsum("ij,ij->i", table.vectors, table.vectors))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DataError(f"cannot normalize zero vector for tag {table.names[zero[0]]!r}")
    return EmbeddingTable(table.dim, table.names, table.vectors / norms[:, None])


def subset(table: EmbeddingTable, names: Sequence[str]) -> EmbeddingTable:
    missing = [n for n in names if n not in table]
    if missing:
        raise DataError(f"tags not in embedding table: {missing}")
    return EmbeddingTable(table.dim, tuple(names), table.matrix(names))


def is_unit_norm(table: EmbeddingTable, tol: float = 1e-6) -> bool:
    if len(table) == 0:
        return True
    norms = np.linalg.norm(table.vectors, axis=1)
    return bool(np.all(np.abs(norms - 1.0) <= tol))
