"""Text collections, embedding matrices, and the shared file formats.

The binary embedding-matrix format (little-endian):

    magic   4 bytes  b"SDEM"
    version u32      currently 1
    dim     u32      vector width
    rows    u64      row count
    then per row:
        id_len  u16
        id      id_len bytes, UTF-8
        vector  dim * f32

Collections travel as JSON Lines with fields exactly
``text_id``, ``text`` and ``group_id``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping, Sequence

import numpy as np

MAGIC = b"SDEM"
FORMAT_VERSION = 1
_MAX_DIM = 2**31 - 1

_HEADER = struct.Struct("<4sIIQ")
_ID_LEN = struct.Struct("<H")


class MatrixFormatError(ValueError):
    """Matrix bytes violate the binary format; ``code`` is stable and machine-readable."""

    def __init__(self, code: str, detail: str = ""):
        self.code = code
        super().__init__(f"{code}: {detail}" if detail else code)


class DegenerateVectorError(ValueError):
    """A zero-norm vector reached a cosine computation."""


@dataclass(frozen=True)
class TextItem:
    text_id: str
    text: str
    group_id: int


@dataclass(frozen=True)
class TextCollection:
    """Immutable set of texts, each belonging to exactly one Q&A group."""

    items: tuple[TextItem, ...]

    def __post_init__(self):
        seen = set()
        for item in self.items:
            if item.text_id in seen:
                raise ValueError(f"duplicate text_id: {item.text_id!r}")
            if item.group_id < 0:
                raise ValueError(f"negative group_id on {item.text_id!r}")
            seen.add(item.text_id)

    def __len__(self) -> int:
        return len(self.items)

    def ids(self) -> list[str]:
        return [item.text_id for item in self.items]

    def group_ids(self) -> list[int]:
        return sorted({item.group_id for item in self.items})

    def group_of(self) -> dict[str, int]:
        return {item.text_id: item.group_id for item in self.items}

    def texts(self) -> dict[str, str]:
        return {item.text_id: item.text for item in self.items}

    def extended(self, new_items: Iterable[TextItem]) -> "TextCollection":
        """A new collection with ``new_items`` appended; uniqueness is re-checked."""
        return TextCollection(self.items + tuple(new_items))


@dataclass(frozen=True)
class EmbeddingMatrix:
    """One model's embedding rows over a text collection.

    Vectors are stored as float32; all arithmetic that consumes them
    accumulates in float64.
    """

    model_id: str
    dim: int
    rows: Mapping[str, np.ndarray]

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")
        for text_id, vec in self.rows.items():
            if vec.shape != (self.dim,):
                raise ValueError(
                    f"row {text_id!r} has shape {vec.shape}, expected ({self.dim},)"
                )
            if vec.dtype != np.float32:
                raise ValueError(f"row {text_id!r} must be float32, got {vec.dtype}")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"row {text_id!r} contains non-finite values")

    def __len__(self) -> int:
        return len(self.rows)

    def vector(self, text_id: str) -> np.ndarray:
        try:
            return self.rows[text_id]
        except KeyError:
            raise KeyError(f"no embedding for text_id {text_id!r} in {self.model_id!r}")

    def covers(self, text_ids: Iterable[str]) -> bool:
        return all(tid in self.rows for tid in text_ids)

    def stacked(self, text_ids: Sequence[str]) -> np.ndarray:
        """Rows for ``text_ids`` stacked into an (n, dim) float32 array."""
        out = np.empty((len(text_ids), self.dim), dtype=np.float32)
        for i, tid in enumerate(text_ids):
            out[i] = self.vector(tid)
        return out


@dataclass(frozen=True)
class GroupSplit:
    group_id: int
    train_ids: tuple[str, ...]
    heldout_ids: tuple[str, ...]
    passage_id: str

    def __post_init__(self):
        overlap = set(self.train_ids) & set(self.heldout_ids)
        if overlap:
            raise ValueError(f"group {self.group_id}: train/heldout overlap {sorted(overlap)}")


@dataclass(frozen=True)
class DatasetSplit:
    """Per-group train/heldout question ids plus the group's passage id."""

    groups: tuple[GroupSplit, ...]

    def __post_init__(self):
        seen = set()
        for g in self.groups:
            if g.group_id in seen:
                raise ValueError(f"duplicate group_id {g.group_id} in split")
            seen.add(g.group_id)

    def by_group(self) -> dict[int, GroupSplit]:
        return {g.group_id: g for g in self.groups}


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two vectors, clamped to [-1, 1].

    Inputs may be any float dtype; dot products and norms accumulate in
    float64. Zero-norm inputs are rejected rather than mapped to 0.
    """
    u64 = np.asarray(u, dtype=np.float64)
    v64 = np.asarray(v, dtype=np.float64)
    if u64.shape != v64.shape or u64.ndim != 1:
        raise ValueError(f"shape mismatch: {u64.shape} vs {v64.shape}")
    nu = np.sqrt(np.dot(u64, u64))
    nv = np.sqrt(np.dot(v64, v64))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError("degenerate vector: zero norm")
    return float(np.clip(np.dot(u64, v64) / (nu * nv), -1.0, 1.0))


def write_matrix(matrix: EmbeddingMatrix, destination: BinaryIO) -> None:
    """Write ``matrix`` in the binary format documented in the module docstring."""
    if matrix.dim > _MAX_DIM:
        raise MatrixFormatError("dimension overflow", f"dim {matrix.dim} exceeds {_MAX_DIM}")
    destination.write(_HEADER.pack(MAGIC, FORMAT_VERSION, matrix.dim, len(matrix.rows)))
    for text_id, vec in matrix.rows.items():
        encoded = text_id.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise MatrixFormatError("id overflow", f"text_id longer than 65535 bytes")
        destination.write(_ID_LEN.pack(len(encoded)))
        destination.write(encoded)
        destination.write(vec.astype("<f4", copy=False).tobytes())


def _read_exact(source: BinaryIO, n: int) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise MatrixFormatError("truncated payload", f"wanted {n} bytes, got {len(data)}")
    return data


def read_matrix(source: BinaryIO, model_id: str = "") -> EmbeddingMatrix:
    """Parse a binary matrix; raises MatrixFormatError with a distinct code per defect."""
    magic, version, dim, row_count = _HEADER.unpack(_read_exact(source, _HEADER.size))
    if magic != MAGIC:
        raise MatrixFormatError("bad magic", f"got {magic!r}")
    if version != FORMAT_VERSION:
        raise MatrixFormatError("version mismatch", f"got {version}, expected {FORMAT_VERSION}")
    if dim == 0:
        raise MatrixFormatError("bad dimension", "dim must be positive")
    rows: dict[str, np.ndarray] = {}
    for _ in range(row_count):
        (id_len,) = _ID_LEN.unpack(_read_exact(source, _ID_LEN.size))
        text_id = _read_exact(source, id_len).decode("utf-8")
        vec = np.frombuffer(_read_exact(source, 4 * dim), dtype="<f4").copy()
        if not np.all(np.isfinite(vec)):
            raise MatrixFormatError("non-finite value", f"row {text_id!r}")
        if text_id in rows:
            raise MatrixFormatError("duplicate row id", f"row {text_id!r}")
        rows[text_id] = vec
    return EmbeddingMatrix(model_id=model_id, dim=int(dim), rows=rows)


def save_matrix(matrix: EmbeddingMatrix, path: str | Path) -> None:
    with open(path, "wb") as f:
        write_matrix(matrix, f)


def load_matrix(path: str | Path, model_id: str | None = None) -> EmbeddingMatrix:
    with open(path, "rb") as f:
        return read_matrix(f, model_id=model_id if model_id is not None else Path(path).stem)


def write_collection(collection: TextCollection, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for item in collection.items:
            f.write(json.dumps(
                {"text_id": item.text_id, "text": item.text, "group_id": item.group_id},
                ensure_ascii=False,
            ))
            f.write("\n")


def read_collection(path: str | Path) -> TextCollection:
    items = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {e}") from e
            items.append(TextItem(
                text_id=str(obj["text_id"]),
                text=str(obj["text"]),
                group_id=int(obj["group_id"]),
            ))
    return TextCollection(tuple(items))


def write_split(split: DatasetSplit, path: str | Path) -> None:
    payload = {
        "groups": [
            {
                "group_id": g.group_id,
                "train": list(g.train_ids),
                "heldout": list(g.heldout_ids),
                "passage": g.passage_id,
            }
            for g in split.groups
        ]
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def read_split(path: str | Path) -> DatasetSplit:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    groups = tuple(
        GroupSplit(
            group_id=int(g["group_id"]),
            train_ids=tuple(str(t) for t in g["train"]),
            heldout_ids=tuple(str(t) for t in g["heldout"]),
            passage_id=str(g["passage"]),
        )
        for g in payload["groups"]
    )
    return DatasetSplit(groups)
