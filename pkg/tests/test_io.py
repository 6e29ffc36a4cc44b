import numpy as np
import pytest

from fslm.io import (
    FileFormatError,
    read_matrix,
    read_model_file,
    sidecar_path,
    write_matrix,
    write_model_file,
)


def test_matrix_round_trip(tmp_path):
    p = tmp_path / "m.bin"
    values = np.arange(12, dtype=np.float64).reshape(4, 3) / 7.0
    write_matrix(p, values, ["a", "b", "c"], meta={"note": "x"})
    got, columns, meta = read_matrix(p)
    np.testing.assert_array_equal(got, values)
    assert columns == ["a", "b", "c"]
    assert meta == {"note": "x"}


def test_matrix_rejects_bad_column_count(tmp_path):
    with pytest.raises(ValueError):
        write_matrix(tmp_path / "m.bin", np.zeros((2, 3)), ["only", "two"])


def test_matrix_rejects_truncation(tmp_path):
    p = tmp_path / "m.bin"
    write_matrix(p, np.ones((5, 2)), ["a", "b"])
    blob = p.read_bytes()
    p.write_bytes(blob[:-8])
    with pytest.raises(FileFormatError, match="size mismatch"):
        read_matrix(p)


def test_matrix_rejects_missing_sidecar(tmp_path):
    p = tmp_path / "m.bin"
    write_matrix(p, np.ones((2, 2)), ["a", "b"])
    (tmp_path / sidecar_path(p).split("/")[-1]).unlink()
    with pytest.raises(FileFormatError, match="sidecar"):
        read_matrix(p)


def test_matrix_rejects_sidecar_shape_disagreement(tmp_path):
    p = tmp_path / "m.bin"
    write_matrix(p, np.ones((2, 2)), ["a", "b"])
    other = tmp_path / "other.bin"
    write_matrix(other, np.ones((3, 2)), ["a", "b"])
    # swap in a sidecar describing different dimensions
    (tmp_path / "m.bin.json").write_bytes((tmp_path / "other.bin.json").read_bytes())
    with pytest.raises(FileFormatError, match="disagree"):
        read_matrix(p)


def test_model_file_round_trip_bitwise(tmp_path):
    p = tmp_path / "model.bin"
    arrays = [
        np.linspace(0, 1, 6).reshape(2, 3),
        np.array([np.pi, np.e, 1e-300, -0.0]),
    ]
    header = {"kind": "demo", "n_components": 3}
    write_model_file(p, header, arrays)
    got_header, got_arrays = read_model_file(p)
    assert got_header["kind"] == "demo"
    assert got_header["n_components"] == 3
    for a, b in zip(arrays, got_arrays):
        assert a.shape == b.shape
        assert a.tobytes() == b.tobytes()  # bitwise, not just allclose


def test_model_file_detects_corruption(tmp_path):
    p = tmp_path / "model.bin"
    write_model_file(p, {"kind": "demo"}, [np.ones(4)])
    blob = bytearray(p.read_bytes())
    blob[40] ^= 0xFF
    p.write_bytes(bytes(blob))
    with pytest.raises(FileFormatError, match="checksum"):
        read_model_file(p)


def test_model_file_rejects_wrong_magic(tmp_path):
    p = tmp_path / "model.bin"
    p.write_bytes(b"NOTMAGIC" + b"\0" * 64)
    with pytest.raises(FileFormatError, match="magic"):
        read_model_file(p)
