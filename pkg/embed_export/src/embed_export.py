"""One-file exporter: run a sentence-embedding checkpoint over a
collection JSONL and write the toolkit's binary embedding-matrix file.

The wire format (little-endian) matches the primary toolkit exactly:
magic ``SDEM``, version u32 = 1, dim u32, row_count u64, then per row
``id_len`` u16, UTF-8 id bytes, and dim float32 values. Output vectors
are L2-normalized so cosine on the consumer side reduces to a dot
product. Every written file is read back and checked before the command
reports success.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SDEM"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sIIQ")
_ID_LEN = struct.Struct("<H")


@dataclass(frozen=True)
class ExportJob:
    model: str
    collection: Path
    out: Path
    batch_size: int = 32
    device: str | None = None


def read_collection_ids_texts(path: Path) -> tuple[list[str], list[str]]:
    ids: list[str] = []
    texts: list[str] = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            text_id = str(obj["text_id"])
            if text_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate text_id {text_id!r}")
            seen.add(text_id)
            ids.append(text_id)
            texts.append(str(obj["text"]))
    if not ids:
        raise ValueError(f"{path}: collection is empty")
    return ids, texts


def write_matrix_file(path: Path, ids: list[str], vectors: np.ndarray) -> None:
    dim = vectors.shape[1]
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, dim, len(ids)))
        for text_id, vec in zip(ids, vectors):
            encoded = text_id.encode("utf-8")
            f.write(_ID_LEN.pack(len(encoded)))
            f.write(encoded)
            f.write(vec.astype("<f4", copy=False).tobytes())


def verify_matrix_file(path: Path, expected_rows: int) -> None:
    """Read the file back and re-check the invariants we just promised."""
    with open(path, "rb") as f:
        magic, version, dim, row_count = _HEADER.unpack(f.read(_HEADER.size))
        if magic != MAGIC or version != FORMAT_VERSION:
            raise ValueError(f"{path}: re-read failed header check")
        if row_count != expected_rows:
            raise ValueError(f"{path}: row count {row_count} != {expected_rows}")
        for _ in range(row_count):
            (id_len,) = _ID_LEN.unpack(f.read(_ID_LEN.size))
            f.read(id_len).decode("utf-8")
            vec = np.frombuffer(f.read(4 * dim), dtype="<f4")
            if vec.size != dim or not np.all(np.isfinite(vec)):
                raise ValueError(f"{path}: bad row payload on re-read")


def export(job: ExportJob) -> None:
    from sentence_transformers import SentenceTransformer

    try:
        model = SentenceTransformer(job.model, device=job.device)
    except Exception as e:
        raise RuntimeError(f"cannot load model {job.model!r}: {e}") from e

    ids, texts = read_collection_ids_texts(job.collection)
    try:
        vectors = model.encode(
            texts,
            batch_size=job.batch_size,
            normalize_embeddings=True,
            convert_to_numpy=True,
            show_progress_bar=False,
        )
    except RuntimeError as e:
        if "out of memory" in str(e).lower():
            raise RuntimeError(
                f"out of memory at batch size {job.batch_size}; retry with a smaller --batch"
            ) from e
        raise
    vectors = np.asarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[0] != len(ids):
        raise RuntimeError(f"model returned shape {vectors.shape} for {len(ids)} texts")
    if not np.all(np.isfinite(vectors)):
        raise RuntimeError("model produced non-finite embeddings")
    norms = np.linalg.norm(vectors, axis=1)
    dead = np.flatnonzero(norms < 1e-6)
    if dead.size:
        raise RuntimeError(f"zero embedding for text_id {ids[int(dead[0])]!r}")

    write_matrix_file(job.out, ids, vectors)
    verify_matrix_file(job.out, expected_rows=len(ids))
    print(f"wrote {len(ids)} x {vectors.shape[1]} matrix to {job.out}")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="embed_export",
        description="Embed a collection JSONL with a sentence-transformers "
                    "checkpoint and write the binary matrix format.",
    )
    parser.add_argument("--model", required=True, help="model name or local path")
    parser.add_argument("--collection", required=True, help="collection JSONL")
    parser.add_argument("--out", required=True, help="output .bin path")
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--device", default=None, help="torch device hint, e.g. cpu")
    args = parser.parse_args(argv)

    if args.batch < 1:
        print("error: --batch must be >= 1", file=sys.stderr)
        return 2
    collection = Path(args.collection)
    if not collection.exists():
        print(f"error: missing file: {collection}", file=sys.stderr)
        return 2
    job = ExportJob(
        model=args.model,
        collection=collection,
        out=Path(args.out),
        batch_size=args.batch,
        device=args.device,
    )
    try:
        export(job)
    except RuntimeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2 if "cannot load model" in str(e) else 1
    except (ValueError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
