"""Kernel backend selection.

The compiled Cython extension is preferred when importable; otherwise the
pure-numpy fallback is used. Override with POLYPGEN_BACKEND=python|compiled
(``compiled`` raises if the extension is missing).
"""

import os

from . import _ref

_choice = os.environ.get("POLYPGEN_BACKEND", "auto")
if _choice not in ("auto", "compiled", "python"):
    raise ValueError(f"POLYPGEN_BACKEND must be auto, compiled or python, got {_choice!r}")

_impl = _ref
BACKEND = "python"
if _choice in ("auto", "compiled"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise

conv3x3_forward = _impl.conv3x3_forward
conv3x3_backward = _impl.conv3x3_backward
pairwise_sqdist = _impl.pairwise_sqdist


def available_backends():
    """Map of importable backend name -> module, for parity tests and benchmarks."""
    out = {"python": _ref}
    try:
        from . import _core

        out["compiled"] = _core
    except ImportError:
        pass
    return out
