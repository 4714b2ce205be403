"""Numeric hot loops, compiled when the Cython extension is built.

Set ``TDPROBE_PURE_PYTHON=1`` to force the pure-Python fallback.
"""

import os

from . import _pykernels as python

if os.environ.get("TDPROBE_PURE_PYTHON"):
    compiled = None
    active = python
else:
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None
        active = python
    else:
        active = compiled

BACKEND = active.BACKEND

ks_sorted = active.ks_sorted
allocate = active.allocate
simulate_link = active.simulate_link

__all__ = ["BACKEND", "active", "compiled", "python", "ks_sorted", "allocate", "simulate_link"]
