"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the pure-Python
implementation is used.  ``set_backend`` switches explicitly (for tests and
benchmarks).
"""

from __future__ import annotations

from . import _kernels_py

try:  # pragma: no cover - depends on build
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover
    _compiled = None

_active = _compiled if _compiled is not None else _kernels_py


def compiled_available() -> bool:
    return _compiled is not None


def name() -> str:
    return "compiled" if _active is _compiled else "python"


def set_backend(which: str) -> None:
    """Select ``"compiled"`` or ``"python"``."""
    global _active
    if which == "python":
        _active = _kernels_py
    elif which == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        _active = _compiled
    else:
        raise ValueError(f"unknown backend {which!r}")


def theta_march(*args):
    return _active.theta_march(*args)
