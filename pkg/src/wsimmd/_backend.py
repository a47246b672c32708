"""Selects the compiled Gram kernel when importable, else the NumPy one.

Set ``WSIMMD_BACKEND=python`` to force the fallback.
"""

import os

from . import _gram

BACKENDS = {"python": _gram.gram_sum}

try:
    from . import _core
except ImportError:  # extension not built
    _core = None
else:
    BACKENDS["cython"] = _core.gram_sum

if os.environ.get("WSIMMD_BACKEND", "").lower() == "python" or _core is None:
    DEFAULT_BACKEND = "python"
else:
    DEFAULT_BACKEND = "cython"


def get_gram_sum(name=None):
    name = name or DEFAULT_BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable backend {name!r}; "
                         f"available: {sorted(BACKENDS)}") from None
