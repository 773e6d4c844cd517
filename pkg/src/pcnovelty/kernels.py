"""Backend selection for the hot loops.

The compiled extension ``_ckernels`` is used when it was built; otherwise the
pure-Python module ``_pykernels`` is loaded. Set ``PCNOVELTY_PURE_PYTHON=1``
to force the fallback. Both backends return bit-identical results.
"""

import os

from . import _pykernels

if os.environ.get("PCNOVELTY_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "compiled" if _impl is not _pykernels else "python"

nn_brute = _impl.nn_brute
kdtree_query = _impl.kdtree_query
chaos_iterate = _impl.chaos_iterate
smo_solve = _impl.smo_solve


def backends():
    """Return ``{name: module}`` for every importable backend."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        out["compiled"] = _ckernels
    return out
