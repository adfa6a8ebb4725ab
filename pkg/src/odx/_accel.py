"""Numba switch for the tree kernels.

Set ``ODX_DISABLE_NUMBA=1`` to force the pure-numpy code paths (useful
for debugging and for platforms without an LLVM build). When numba is
missing the fallback is chosen automatically.
"""
from __future__ import annotations

import os
import types

_OFF_VALUES = {"1", "true", "yes", "on"}

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("ODX_DISABLE_NUMBA", "").strip().lower() not in _OFF_VALUES

numba_default = {
    "nogil": True,
    "cache": True,
    "fastmath": False,
    "boundscheck": False,
}


def njit(fn):
    """Compile ``fn`` with the shared options, or return it unchanged when numba is unavailable."""
    if not NUMBA_AVAILABLE:
        return fn
    return numba.njit(**numba_default)(fn)


def jitable(fn):
    """Plain Python when called from Python, inlined when called from compiled code."""
    if not NUMBA_AVAILABLE:
        return fn
    from numba.extending import register_jitable

    return register_jitable(fn)


def rebind(fn, **names):
    """Copy of ``fn`` that resolves the given global names to other objects.

    Lets one driver call the loop kernel when compiled and the numpy kernel
    when interpreted.
    """
    g = dict(fn.__globals__)
    g.update(names)
    out = types.FunctionType(fn.__code__, g, fn.__name__, fn.__defaults__, fn.__closure__)
    out.__qualname__ = fn.__qualname__
    out.__module__ = fn.__module__
    return out


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
