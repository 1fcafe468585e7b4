"""Kernel backend selection.

The compiled Cython module is used when it imports; otherwise the numpy
fallback. :func:`use` switches backend at run time (tests, benchmarks).
"""
from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_NAMES = ("walk_first_returns", "coordinate_return_series", "killed_walk_visits",
          "neighborhood_sums")


def backends():
    """Available backend modules keyed by name."""
    out = {"python": _pykernels}
    if _ckernels is not None:
        out["cython"] = _ckernels
    return out


def use(name: str) -> str:
    """Select ``"cython"`` or ``"python"``; returns the previous backend name."""
    global BACKEND
    avail = backends()
    if name not in avail:
        raise ValueError(f"backend {name!r} not available (have {sorted(avail)})")
    prev = globals().get("BACKEND")
    impl = avail[name]
    for fn in _NAMES:
        globals()[fn] = getattr(impl, fn)
    BACKEND = impl.BACKEND
    return prev


use("cython" if _ckernels is not None else "python")
