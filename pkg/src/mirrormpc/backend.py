"""Kernel backend selection: numba-jitted loops or vectorized numpy.

The hot path (batched cartpole rollouts) has two implementations. Selection
order: the ``MIRRORMPC_BACKEND`` environment variable ("numba" / "numpy"),
falling back to numba when it is importable and to numpy otherwise. Tests and
benchmarks can switch at runtime with :func:`use`.
"""

from __future__ import annotations

import os

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return deco


_ENV_VAR = "MIRRORMPC_BACKEND"


def _detect() -> str:
    pref = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if pref in ("numpy", "python"):
        return "numpy"
    if pref == "numba" and not HAVE_NUMBA:
        raise RuntimeError(f"{_ENV_VAR}=numba requested but numba is not importable")
    if pref not in ("auto", "numba", ""):
        raise RuntimeError(f"unknown {_ENV_VAR} value: {pref!r}")
    return "numba" if HAVE_NUMBA else "numpy"


_active = _detect()


def active() -> str:
    """Name of the backend currently used by the fused kernels."""
    return _active


def use(name: str) -> None:
    """Switch kernel backend at runtime ("numba" or "numpy")."""
    global _active
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    _active = name
