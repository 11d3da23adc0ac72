"""Backend selection for the hot numeric kernels.

Two interchangeable implementations exist: numba ``@njit`` kernels (the
default whenever numba imports) and a pure-numpy twin with identical
signatures. Select globally with the ``MHEIPG_BACKEND`` environment variable
("numba", "numpy", or "auto"), or per call site via the ``backend`` argument
that evaluator/solver helpers accept. The model-agnostic "generic" path is
handled one level up and never reaches this module.
"""

from __future__ import annotations

import os

_cache: dict = {}


def get_backend(name=None):
    """Return the kernel module for ``name`` (or the environment default)."""
    if name is None:
        name = os.environ.get("MHEIPG_BACKEND", "auto").lower()
    if name in _cache:
        return _cache[name]
    if name == "numpy":
        from . import numpy_backend as mod
    elif name == "numba":
        from . import numba_backend as mod
    elif name == "auto":
        try:
            from . import numba_backend as mod
        except ImportError:
            from . import numpy_backend as mod
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    _cache[name] = mod
    return mod


def available_backends() -> list[str]:
    names = []
    try:
        get_backend("numba")
        names.append("numba")
    except ImportError:
        pass
    names.append("numpy")
    return names
