"""Backend selection for the statevector kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over. Setting ``EDGEBURST_PURE_PYTHON=1`` forces the
numpy backend.
"""
import os
from types import ModuleType

from . import _kernels_py

OPCODES = {"X": 0, "H": 1, "S": 2, "Sdg": 3, "RZ": 4, "RX": 5, "CX": 6}

_compiled: ModuleType | None
try:
    from . import _kernels as _compiled  # type: ignore[attr-defined]
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None


def available_backends() -> list[str]:
    """Names of the backends importable in this installation."""
    return ["compiled", "python"] if _compiled is not None else ["python"]


def get_backend(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` (``"compiled"`` or ``"python"``).

    With ``name=None`` the default selection rules apply.
    """
    if name is None:
        if os.environ.get("EDGEBURST_PURE_PYTHON", "") not in ("", "0"):
            return _kernels_py
        return _compiled if _compiled is not None else _kernels_py
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


backend = get_backend()
BACKEND = "compiled" if backend is _compiled and _compiled is not None else "python"
