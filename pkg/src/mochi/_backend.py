"""Kernel backend selection.

The compiled extension is used when available; the pure-Python module is the
fallback.  Set ``MOCHI_PURE_PYTHON=1`` to force the fallback (used by the
parity tests and the backend benchmark).  Both backends implement the same
interface with bitwise-identical outputs.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("MOCHI_PURE_PYTHON"):
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = _kernels_py

BACKEND: str = kernels.NAME


def get_backend(name: str | None = None):
    """Return a kernel module by name ("compiled", "python", or None for the
    active default)."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels  # raises ImportError if the extension is absent

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
