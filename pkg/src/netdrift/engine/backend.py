"""Selects the square-loss window implementation at import time.

The compiled extension is preferred when present; the numpy fallback is
always available.  Set NETDRIFT_BACKEND=python or =compiled to force a
choice (forcing the missing extension is an error).
"""

import os

from . import _square_fallback

try:
    from . import _square_kernel
except ImportError:
    _square_kernel = None


def available_backends():
    names = ["python"]
    if _square_kernel is not None:
        names.insert(0, "compiled")
    return names


def select_backend():
    forced = os.environ.get("NETDRIFT_BACKEND")
    if forced == "python":
        return _square_fallback
    if forced == "compiled":
        if _square_kernel is None:
            raise ImportError(
                "NETDRIFT_BACKEND=compiled but the extension is not built"
            )
        return _square_kernel
    if forced:
        raise ValueError(f"unknown NETDRIFT_BACKEND {forced!r}")
    return _square_kernel if _square_kernel is not None else _square_fallback


def backend_name() -> str:
    return select_backend().BACKEND_NAME


def run_square_window(*args, backend=None):
    impl = backend if backend is not None else select_backend()
    return impl.run_square_window(*args)
