"""Deterministic seeding, hashing, and atomic file helpers."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from typing import Any, Iterable

import numpy as np


def _canonical_key(key: Any) -> str:
    """Render a seed-key component into a stable string.

    Only types with a platform-independent representation are accepted, so the
    derived seeds are reproducible across machines and Python versions.
    """
    if isinstance(key, (bool, np.bool_)):
        return f"b:{int(key)}"
    if isinstance(key, (int, np.integer)):
        return f"i:{int(key)}"
    if isinstance(key, str):
        return f"s:{key}"
    if isinstance(key, (tuple, list)):
        inner = ",".join(_canonical_key(k) for k in key)
        return f"t:({inner})"
    if isinstance(key, frozenset):
        inner = ",".join(sorted(_canonical_key(k) for k in key))
        return f"f:({inner})"
    raise TypeError(f"unsupported seed key component: {key!r} ({type(key).__name__})")


def seed_sequence(*keys: Any) -> np.random.SeedSequence:
    """Derive a SeedSequence from structured keys via SHA-256.

    ``seed_sequence(master, i)`` for item ``i`` of a batch gives streams that
    are independent of how the batch is partitioned across workers, which is
    what makes serial and parallel dataset generation bit-identical.
    """
    text = "|".join(_canonical_key(k) for k in keys)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    words = np.frombuffer(digest[:16], dtype="<u4")
    return np.random.SeedSequence([int(w) for w in words])


def rng_for(*keys: Any) -> np.random.Generator:
    """Deterministic PCG64 generator keyed by ``keys``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(*keys)))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file + rename in one directory."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: str | os.PathLike, obj: Any) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: str | os.PathLike) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def as_float_list(values: Iterable[float]) -> list[float]:
    """JSON-safe float list (numpy scalars converted to Python floats)."""
    return [float(v) for v in values]
