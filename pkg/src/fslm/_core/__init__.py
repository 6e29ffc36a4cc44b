"""Compute-backend selection.

Two interchangeable implementations of the hot kernels exist: a Cython
extension (``compiled``) and a pure-NumPy module (``python``).  Selection
order: an explicit :func:`use_backend` override, then the ``FSLM_BACKEND``
environment variable, then ``auto`` (compiled if the extension imported,
otherwise the fallback).  Everything downstream calls :func:`get_backend`
at run time, so tests can exercise both implementations in one process.
"""

from __future__ import annotations

import contextlib
import os
from dataclasses import dataclass
from typing import Any, Callable, Iterator

from fslm._core import fallback as _fallback

try:
    from fslm._core import _kernels as _compiled
except ImportError:
    _compiled = None


@dataclass(frozen=True)
class Backend:
    name: str
    hh_integrate_batch: Callable[..., Any]
    kd_query_batch: Callable[..., Any]


_PYTHON = Backend(
    name="python",
    hh_integrate_batch=_fallback.hh_integrate_batch,
    kd_query_batch=_fallback.kd_query_batch,
)
_COMPILED = (
    None
    if _compiled is None
    else Backend(
        name="compiled",
        hh_integrate_batch=_compiled.hh_integrate_batch,
        kd_query_batch=_compiled.kd_query_batch,
    )
)

_override: str | None = None


def available_backends() -> list[str]:
    names = ["python"]
    if _COMPILED is not None:
        names.insert(0, "compiled")
    return names


def _resolve(name: str) -> Backend:
    if name == "python":
        return _PYTHON
    if name == "compiled":
        if _COMPILED is None:
            raise RuntimeError(
                "compiled backend requested but the fslm._core._kernels "
                "extension is not built; reinstall the package or set "
                "FSLM_BACKEND=python"
            )
        return _COMPILED
    if name == "auto":
        return _COMPILED if _COMPILED is not None else _PYTHON
    raise ValueError(f"unknown backend {name!r}; expected compiled, python, or auto")


def get_backend() -> Backend:
    """Return the active backend (override > FSLM_BACKEND env > auto)."""
    if _override is not None:
        return _resolve(_override)
    return _resolve(os.environ.get("FSLM_BACKEND", "auto"))


@contextlib.contextmanager
def use_backend(name: str) -> Iterator[Backend]:
    """Force a backend within a ``with`` block (used heavily by tests)."""
    global _override
    _resolve(name)  # fail fast on unknown/unavailable names
    previous = _override
    _override = name
    try:
        yield get_backend()
    finally:
        _override = previous
