"""Hot-kernel backend selection.

Prefers the compiled extension; falls back to the pure-Python mirror when
the extension was not built.  Set WEYLMAP_BACKEND=python (or =cython) to
force a choice, e.g. for benchmarking.
"""

import os

_forced = os.environ.get("WEYLMAP_BACKEND", "").strip().lower()

if _forced == "python":
    from . import _rk_py as _impl
elif _forced == "cython":
    from . import _rk as _impl  # raises ImportError if the extension is missing
else:
    try:
        from . import _rk as _impl
    except ImportError:
        from . import _rk_py as _impl

BACKEND_NAME = _impl.BACKEND_NAME
integrate_layer = _impl.integrate_layer
