"""Backend selection for the fused recurrent kernels.

The compiled extension ``irregad._ckernels`` is used when it imports;
otherwise the numpy twin in ``irregad._pykernels`` takes over. Both expose
identical functions, so callers go through :func:`impl` and never care which
one is active.
"""

from __future__ import annotations

import logging
from types import ModuleType

from . import _pykernels

logger = logging.getLogger(__name__)

try:
    from . import _ckernels  # type: ignore[attr-defined]
except ImportError:  # extension not built
    _ckernels = None

_active: ModuleType = _ckernels if _ckernels is not None else _pykernels


def available() -> list[str]:
    return ["compiled", "python"] if _ckernels is not None else ["python"]


def backend() -> str:
    return _active.BACKEND


def use_backend(name: str) -> str:
    """Switch the active kernel backend; returns the previous backend name."""
    global _active
    previous = backend()
    if name == "python":
        _active = _pykernels
    elif name == "compiled":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        _active = _ckernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    logger.debug("kernel backend %s -> %s", previous, name)
    return previous


def impl() -> ModuleType:
    return _active
