"""Kernel dispatch.

The compiled extension is used when it imports; otherwise the numpy
implementation. Set ``ENROLLTSS_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py as python_backend

compiled_backend = None
if os.environ.get("ENROLLTSS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels_ext as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

BACKEND = "cython" if compiled_backend is not None else "python"

_lstm = compiled_backend or python_backend

lstm_forward = _lstm.lstm_forward
lstm_backward = _lstm.lstm_backward
sigmoid = python_backend.sigmoid
unfold = python_backend.unfold
fold = python_backend.fold


def use_backend(name: str) -> None:
    """Switch the LSTM recurrence between ``"cython"`` and ``"python"`` at runtime."""
    global BACKEND, lstm_forward, lstm_backward
    if name == "cython":
        if compiled_backend is None:
            raise ImportError("compiled extension enrolltss.autograd._kernels_ext is not built")
        impl = compiled_backend
    elif name == "python":
        impl = python_backend
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
    lstm_forward = impl.lstm_forward
    lstm_backward = impl.lstm_backward
