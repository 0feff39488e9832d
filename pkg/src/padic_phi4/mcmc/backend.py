"""Select the compiled sweep kernel, or the numpy fallback when it is missing.

Set ``PADIC_PHI4_BACKEND=python`` to force the fallback and
``PADIC_PHI4_BACKEND=cython`` to require the compiled kernel.
"""

import os

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _fallback.update_level}
if _compiled is not None:
    BACKENDS["cython"] = _compiled.update_level


def _choose():
    want = os.environ.get("PADIC_PHI4_BACKEND", "").strip().lower()
    if want == "cython" and _compiled is None:
        raise ImportError("PADIC_PHI4_BACKEND=cython but the compiled kernel is not built")
    if want in BACKENDS:
        return want
    if want:
        raise ValueError(f"unknown backend {want!r}; choose from {sorted(BACKENDS)}")
    return "cython" if _compiled is not None else "python"


ACTIVE = _choose()


def get_update_level(name=None):
    return BACKENDS[name or ACTIVE]
