from __future__ import annotations

import io
import math
import struct

import numpy as np
import pytest

from softtune.corpus import (
    DatasetSplit,
    DegenerateVectorError,
    EmbeddingMatrix,
    GroupSplit,
    MatrixFormatError,
    TextCollection,
    TextItem,
    cosine,
    read_collection,
    read_matrix,
    read_split,
    write_collection,
    write_matrix,
    write_split,
)


def _matrix(rows: dict[str, list[float]], dim: int, model_id: str = "m") -> EmbeddingMatrix:
    return EmbeddingMatrix(
        model_id=model_id,
        dim=dim,
        rows={k: np.asarray(v, dtype=np.float32) for k, v in rows.items()},
    )


def _roundtrip(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    buf = io.BytesIO()
    write_matrix(matrix, buf)
    buf.seek(0)
    return read_matrix(buf, model_id=matrix.model_id)


class TestMatrixFormat:
    def test_single_row_layout(self):
        # 32-byte header (4 magic + 4 version + 4 dim + 8 rows + 2 id_len + 2 id + 8 floats)
        matrix = _matrix({"ab": [1.0, 0.0]}, dim=2)
        buf = io.BytesIO()
        write_matrix(matrix, buf)
        data = buf.getvalue()
        assert data[:4] == b"SDEM"
        version, dim = struct.unpack_from("<II", data, 4)
        (row_count,) = struct.unpack_from("<Q", data, 12)
        assert (version, dim, row_count) == (1, 2, 1)
        (id_len,) = struct.unpack_from("<H", data, 20)
        assert id_len == 2
        assert data[22:24] == b"ab"
        assert len(data) == 20 + 2 + 2 + 8
        assert _roundtrip(matrix).rows["ab"].tolist() == [1.0, 0.0]

    def test_empty_matrix_roundtrips(self):
        matrix = _matrix({}, dim=4)
        back = _roundtrip(matrix)
        assert back.dim == 4
        assert len(back.rows) == 0

    def test_random_matrices_roundtrip_bit_exact(self):
        # 100 seeded random matrices, payload compared bit for bit.
        rng = np.random.default_rng(20240901)
        for _ in range(100):
            n = int(rng.integers(1, 12))
            dim = int(rng.integers(1, 33))
            rows = {
                f"id-{i}-{rng.integers(1 << 16)}": rng.standard_normal(dim).astype(np.float32)
                for i in range(n)
            }
            matrix = EmbeddingMatrix(model_id="rt", dim=dim, rows=rows)
            back = _roundtrip(matrix)
            assert list(back.rows.keys()) == list(rows.keys())
            for key in rows:
                assert rows[key].tobytes() == back.rows[key].tobytes()

    def test_bad_magic(self):
        buf = io.BytesIO()
        write_matrix(_matrix({"a": [1.0]}, dim=1), buf)
        data = bytearray(buf.getvalue())
        data[:4] = b"NOPE"
        with pytest.raises(MatrixFormatError) as err:
            read_matrix(io.BytesIO(bytes(data)))
        assert err.value.code == "bad magic"

    def test_version_mismatch(self):
        buf = io.BytesIO()
        write_matrix(_matrix({"a": [1.0]}, dim=1), buf)
        data = bytearray(buf.getvalue())
        struct.pack_into("<I", data, 4, 7)
        with pytest.raises(MatrixFormatError) as err:
            read_matrix(io.BytesIO(bytes(data)))
        assert err.value.code == "version mismatch"

    def test_truncated_payload(self):
        buf = io.BytesIO()
        write_matrix(_matrix({"a": [1.0, 2.0]}, dim=2), buf)
        data = buf.getvalue()[:-3]
        with pytest.raises(MatrixFormatError) as err:
            read_matrix(io.BytesIO(data))
        assert err.value.code == "truncated payload"

    def test_nan_payload(self):
        buf = io.BytesIO()
        write_matrix(_matrix({"a": [1.0]}, dim=1), buf)
        data = bytearray(buf.getvalue())
        struct.pack_into("<f", data, len(data) - 4, math.nan)
        with pytest.raises(MatrixFormatError) as err:
            read_matrix(io.BytesIO(bytes(data)))
        assert err.value.code == "non-finite value"

    def test_unicode_ids_roundtrip(self):
        matrix = _matrix({"质问-1": [0.5, -0.5]}, dim=2)
        assert "质问-1" in _roundtrip(matrix).rows

    def test_dimension_overflow_on_write(self):
        huge = EmbeddingMatrix("m", 2**31, {})  # constructible: no rows to validate
        with pytest.raises(MatrixFormatError) as err:
            write_matrix(huge, io.BytesIO())
        assert err.value.code == "dimension overflow"

    def test_zero_dim_file_rejected(self):
        data = struct.pack("<4sIIQ", b"SDEM", 1, 0, 0)
        with pytest.raises(MatrixFormatError) as err:
            read_matrix(io.BytesIO(data))
        assert err.value.code == "bad dimension"


class TestCosine:
    def test_self_similarity(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            x = rng.standard_normal(8)
            assert cosine(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_hand_computed(self):
        # 32 / (sqrt(14) * sqrt(77))
        got = cosine(np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0]))
        assert got == pytest.approx(0.974631846, abs=1e-6)

    def test_symmetry(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            u = rng.standard_normal(16)
            v = rng.standard_normal(16)
            assert abs(cosine(u, v) - cosine(v, u)) < 1e-12

    def test_scale_invariance(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            u = rng.standard_normal(10)
            v = rng.standard_normal(10)
            a = float(rng.uniform(0.01, 100.0))
            b = float(rng.uniform(0.01, 100.0))
            assert abs(cosine(a * u, b * v) - cosine(u, v)) < 1e-9

    def test_zero_norm_rejected(self):
        with pytest.raises(DegenerateVectorError):
            cosine(np.zeros(3), np.ones(3))

    def test_clamped_to_unit_interval(self):
        # Nearly parallel float32 vectors can push the raw ratio past 1.
        u = np.asarray([1.0, 1e-8], dtype=np.float32)
        assert cosine(u, u) <= 1.0


class TestCollections:
    def test_duplicate_text_id_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            TextCollection((TextItem("a", "x", 0), TextItem("a", "y", 0)))

    def test_negative_group_rejected(self):
        with pytest.raises(ValueError, match="group_id"):
            TextCollection((TextItem("a", "x", -1),))

    def test_collection_jsonl_roundtrip(self, tmp_path):
        collection = TextCollection((
            TextItem("q1", "first question", 0),
            TextItem("q2", "second question. with punctuation", 1),
        ))
        path = tmp_path / "collection.jsonl"
        write_collection(collection, path)
        back = read_collection(path)
        assert back == collection

    def test_split_roundtrip_and_disjointness(self, tmp_path):
        split = DatasetSplit((
            GroupSplit(0, ("a", "b"), ("c",), "p0"),
            GroupSplit(1, ("d",), (), "p1"),
        ))
        path = tmp_path / "split.json"
        write_split(split, path)
        assert read_split(path) == split
        with pytest.raises(ValueError, match="overlap"):
            GroupSplit(0, ("a",), ("a",), "p")

    def test_matrix_validation(self):
        with pytest.raises(ValueError, match="non-finite"):
            _matrix({"a": [np.inf, 0.0]}, dim=2)
        with pytest.raises(ValueError, match="shape"):
            EmbeddingMatrix("m", 3, {"a": np.zeros(2, dtype=np.float32)})
