"""On-disk formats: binary matrices with JSON sidecars, and model files.

Matrix files hold a single row-major float64 array (little-endian) behind an
8-byte magic header and two explicit dimension words.  Column names and any
run metadata travel in a ``<file>.json`` sidecar so the binary payload stays
trivially memory-mappable.  Model files are versioned single-file archives:
magic, format version, a JSON architecture header, raw weight blobs, and a
trailing SHA-256 checksum over everything before it.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from typing import Any

import numpy as np

from fslm._util import atomic_write_bytes, write_json

MATRIX_MAGIC = b"FSLMMAT\x01"
MODEL_MAGIC = b"FSLMMDN\x01"
MODEL_FORMAT_VERSION = 1


class FileFormatError(RuntimeError):
    """Raised when a file fails magic, version, shape, or checksum validation."""


def sidecar_path(path: str | os.PathLike) -> str:
    return os.fspath(path) + ".json"


def write_matrix(
    path: str | os.PathLike,
    values: np.ndarray,
    columns: list[str],
    meta: dict[str, Any] | None = None,
) -> None:
    """Write a 2-D float64 matrix plus its JSON sidecar.

    The sidecar records the column names, dimensions, and caller-provided
    metadata; ``read_matrix`` cross-checks it against the binary header.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {values.shape}")
    if len(columns) != values.shape[1]:
        raise ValueError(
            f"{len(columns)} column names for {values.shape[1]} columns"
        )
    header = MATRIX_MAGIC + struct.pack("<QQ", values.shape[0], values.shape[1])
    payload = values.astype("<f8", copy=False).tobytes(order="C")
    atomic_write_bytes(path, header + payload)
    sidecar = {
        "format": "fslm-matrix",
        "version": 1,
        "rows": int(values.shape[0]),
        "cols": int(values.shape[1]),
        "columns": list(columns),
        "meta": meta or {},
    }
    write_json(sidecar_path(path), sidecar)


def read_matrix(path: str | os.PathLike) -> tuple[np.ndarray, list[str], dict[str, Any]]:
    """Read a matrix file; returns ``(values, columns, meta)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 24 or blob[:8] != MATRIX_MAGIC:
        raise FileFormatError(f"{path}: not a matrix file (bad magic)")
    rows, cols = struct.unpack("<QQ", blob[8:24])
    expected = 24 + rows * cols * 8
    if len(blob) != expected:
        raise FileFormatError(
            f"{path}: payload size mismatch (expected {expected} bytes, found {len(blob)})"
        )
    values = np.frombuffer(blob[24:], dtype="<f8").reshape(rows, cols).copy()
    try:
        with open(sidecar_path(path), "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError as exc:
        raise FileFormatError(f"{path}: missing sidecar {sidecar_path(path)}") from exc
    if sidecar.get("rows") != rows or sidecar.get("cols") != cols:
        raise FileFormatError(f"{path}: sidecar dimensions disagree with binary header")
    columns = list(sidecar.get("columns", []))
    if len(columns) != cols:
        raise FileFormatError(f"{path}: sidecar lists {len(columns)} columns for {cols}")
    return values, columns, dict(sidecar.get("meta", {}))


def write_model_file(
    path: str | os.PathLike,
    header: dict[str, Any],
    arrays: list[np.ndarray],
) -> None:
    """Write a versioned model archive with a trailing SHA-256 checksum."""
    header = dict(header)
    header["array_shapes"] = [list(a.shape) for a in arrays]
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [
        MODEL_MAGIC,
        struct.pack("<I", MODEL_FORMAT_VERSION),
        struct.pack("<Q", len(header_bytes)),
        header_bytes,
        struct.pack("<Q", len(arrays)),
    ]
    for arr in arrays:
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C")
        parts.append(struct.pack("<Q", len(blob)))
        parts.append(blob)
    body = b"".join(parts)
    checksum = hashlib.sha256(body).digest()
    atomic_write_bytes(path, body + checksum)


def read_model_file(path: str | os.PathLike) -> tuple[dict[str, Any], list[np.ndarray]]:
    """Read a model archive, verifying magic, version, and checksum."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 + 4 + 8 + 8 + 32 or blob[:8] != MODEL_MAGIC:
        raise FileFormatError(f"{path}: not a model file (bad magic)")
    body, checksum = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != checksum:
        raise FileFormatError(f"{path}: checksum mismatch (file corrupted?)")
    offset = 8
    (version,) = struct.unpack_from("<I", body, offset)
    offset += 4
    if version != MODEL_FORMAT_VERSION:
        raise FileFormatError(
            f"{path}: unsupported model format version {version} "
            f"(this build reads version {MODEL_FORMAT_VERSION})"
        )
    (header_len,) = struct.unpack_from("<Q", body, offset)
    offset += 8
    header = json.loads(body[offset : offset + header_len].decode("utf-8"))
    offset += header_len
    (n_arrays,) = struct.unpack_from("<Q", body, offset)
    offset += 8
    shapes = header.get("array_shapes")
    if shapes is None or len(shapes) != n_arrays:
        raise FileFormatError(f"{path}: header does not describe {n_arrays} arrays")
    arrays = []
    for shape in shapes:
        (nbytes,) = struct.unpack_from("<Q", body, offset)
        offset += 8
        arr = np.frombuffer(body[offset : offset + nbytes], dtype="<f8")
        offset += nbytes
        expected_size = int(np.prod(shape)) if shape else 1
        if arr.size != expected_size:
            raise FileFormatError(f"{path}: array payload does not match shape {shape}")
        arrays.append(arr.reshape(shape).copy())
    if offset != len(body):
        raise FileFormatError(f"{path}: trailing bytes after final array")
    return header, arrays
