"""Backend selection for the hot forward kernels.

The compiled extension (``_core``, Cython + BLAS) is preferred when it
imported cleanly; otherwise the pure-numpy reference is used. Set
``PTLKIT_BACKEND=numpy`` or ``PTLKIT_BACKEND=compiled`` to force one
(forcing ``compiled`` raises if the extension is missing).
"""

from __future__ import annotations

import os

from . import _numpy_ref

_forced = os.environ.get("PTLKIT_BACKEND", "").strip().lower()

if _forced == "numpy":
    _impl = _numpy_ref
elif _forced == "compiled":
    from . import _core as _impl  # type: ignore[no-redef]
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _numpy_ref

mlp_forward_batch = _impl.mlp_forward_batch
progressive_forward_batch = _impl.progressive_forward_batch

WIRING_SAME_LAYER = 0   # lateral from source layer k, scaled, inside the ReLU
WIRING_PREV_LAYER = 1   # lateral from source layer k-1, original wiring


def backend_name() -> str:
    """Name of the active kernel backend ("compiled" or "numpy")."""
    return _impl.NAME


def available_backends() -> list[str]:
    names = ["numpy"]
    try:
        from . import _core  # noqa: F401
        names.insert(0, "compiled")
    except ImportError:
        pass
    return names
