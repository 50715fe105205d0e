"""Backend selection for the hot loops.

The compiled extension ``_ckernels`` is used when it is importable; the
pure-numpy module ``_pykernels`` is the fallback. Set
``VBATTERY_BACKEND=python`` to force the fallback (``cython`` makes a missing
extension an import error instead of a silent fallback).
"""

import os

from . import _pykernels

_requested = os.environ.get("VBATTERY_BACKEND", "auto").lower()

try:
    if _requested == "python":
        raise ImportError("python backend requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    if _requested == "cython":
        raise
    _impl = _pykernels
    BACKEND = "python"


def get_backend(name: str):
    """Return the kernel module named ``"cython"`` or ``"python"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


agent_keys = _impl.agent_keys
counter_uniform = _impl.counter_uniform
lti_run = _impl.lti_run
tcl_euler = _impl.tcl_euler
sample_pair_counts = _impl.sample_pair_counts
mf_integrate = _impl.mf_integrate
agents_run = _impl.agents_run
