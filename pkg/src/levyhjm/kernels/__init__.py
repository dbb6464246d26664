"""Backend selection for the hot path kernels.

The env var LHC_BACKEND picks the implementation: "numba" (jitted, the
default when numba imports cleanly), "numpy" (pure vectorized fallback).
Both backends share random-stream layout and iteration counts, so results
agree to floating-point rounding and are individually deterministic.
"""

from __future__ import annotations

import logging
import os

log = logging.getLogger("levyhjm.kernels")

_HAS_NUMBA = False
try:
    import numba  # noqa: F401
    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    pass


def active_backend(override: str | None = None) -> str:
    """Resolve the backend name from override, env, and availability."""
    choice = (override or os.environ.get("LHC_BACKEND", "auto")).lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"unknown backend {choice!r} (use numba|numpy|auto)")
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not _HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        return "numba"
    return "numba" if _HAS_NUMBA else "numpy"


def get_runner(backend: str | None = None):
    """Return the chunk runner for the resolved backend."""
    name = active_backend(backend)
    if name == "numba":
        from . import numba_impl
        return numba_impl.run_chunk
    from . import numpy_impl
    return numpy_impl.run_chunk
