"""Kernel backend selection.

The hot kernels (softmax, layer norm, recurrent sequence) exist twice: a
Cython extension (``_core``) and a pure-numpy fallback.  The compiled one is
preferred when importable; TRAJFLOW_KERNELS={auto,compiled,numpy} overrides.
"""

import os

from . import numpy_backend

_choice = os.environ.get("TRAJFLOW_KERNELS", "auto")
if _choice not in ("auto", "compiled", "numpy"):
    raise ValueError(f"TRAJFLOW_KERNELS must be auto|compiled|numpy, got {_choice!r}")

backend = None
if _choice in ("auto", "compiled"):
    try:
        from . import _core as backend
    except ImportError:
        if _choice == "compiled":
            raise
        backend = None
if backend is None:
    backend = numpy_backend

NAME = backend.NAME
softmax_forward = backend.softmax_forward
softmax_backward = backend.softmax_backward
layernorm_forward = backend.layernorm_forward
layernorm_backward = backend.layernorm_backward
lstm_forward = backend.lstm_forward
lstm_backward = backend.lstm_backward


def available_backends():
    """All importable backends keyed by name (for parity tests / benchmarks)."""
    found = {numpy_backend.NAME: numpy_backend}
    try:
        from . import _core

        found[_core.NAME] = _core
    except ImportError:
        pass
    return found
