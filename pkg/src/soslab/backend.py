"""Kernel selection: compiled extension when available, pure Python otherwise.

Set SOSLAB_PURE=1 to force the fallback.  Both implementations draw from the
same uniform stream in the same order, so the choice never changes results,
only speed.
"""

import os


def _load():
    if not os.environ.get("SOSLAB_PURE"):
        try:
            from . import _kernels

            return _kernels
        except ImportError:
            pass
    from . import _purekernels

    return _purekernels


kernels = _load()
COMPILED = bool(getattr(kernels, "COMPILED", False))
