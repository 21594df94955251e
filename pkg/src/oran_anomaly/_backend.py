"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise, or
when ``ORAN_ANOMALY_PURE_PYTHON`` is set, the numpy fallback is used.
"""
from __future__ import annotations

import contextlib
import importlib
import os
from types import ModuleType

from . import _pykernels


def _load_compiled() -> ModuleType | None:
    try:
        return importlib.import_module("oran_anomaly._ckernels")
    except ImportError:
        return None


_compiled = _load_compiled()
_active: ModuleType = _pykernels if (_compiled is None or os.environ.get("ORAN_ANOMALY_PURE_PYTHON")) else _compiled


def kernels() -> ModuleType:
    return _active


def available() -> list[str]:
    return ["python"] + (["cython"] if _compiled is not None else [])


def get(name: str) -> ModuleType:
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def set_backend(name: str) -> None:
    global _active
    _active = get(name)


@contextlib.contextmanager
def use_backend(name: str):
    global _active
    previous = _active
    _active = get(name)
    try:
        yield _active
    finally:
        _active = previous
