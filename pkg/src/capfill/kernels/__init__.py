"""Kernel dispatch: compiled extension when available, numpy otherwise.

The two backends implement the same function set with identical semantics.
Selection happens once at import time; ``CAPFILL_BACKEND=python`` or
``=native`` forces a choice (the latter raises if the extension was never
built).  :func:`use_backend` rebinds the module-level functions, which is
what the benchmark and the cross-backend tests use.
"""

from __future__ import annotations

import os

from . import numpy_backend

_BACKENDS = {"python": numpy_backend}

try:
    from . import _native  # type: ignore[attr-defined]

    _BACKENDS["native"] = _native
except ImportError:
    _native = None

_KERNELS = (
    "softmax",
    "affine",
    "affine_bwd",
    "lstm_fwd",
    "lstm_bwd",
    "attention_fwd",
    "attention_bwd",
    "adam_step",
)

BACKEND = ""


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def use_backend(name: str) -> None:
    """Rebind the kernel functions to the named backend."""
    global BACKEND
    if name not in _BACKENDS:
        raise ValueError(
            f"unknown kernel backend {name!r}; available: {available_backends()}"
        )
    mod = _BACKENDS[name]
    for fn in _KERNELS:
        globals()[fn] = getattr(mod, fn)
    BACKEND = name


use_backend(os.environ.get("CAPFILL_BACKEND") or ("native" if _native else "python"))
