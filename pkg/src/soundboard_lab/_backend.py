"""Kernel backend selection.

``SOUNDBOARD_LAB_BACKEND=numpy`` forces the vectorised numpy path; the
default uses numba when it imports cleanly.
"""
import os

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is optional
    HAS_NUMBA = False


def backend_name():
    requested = os.environ.get("SOUNDBOARD_LAB_BACKEND", "").strip().lower()
    if requested == "numpy":
        return "numpy"
    if requested == "numba" and not HAS_NUMBA:
        raise RuntimeError("SOUNDBOARD_LAB_BACKEND=numba but numba is not installed")
    return "numba" if HAS_NUMBA else "numpy"


def debug_enabled():
    return os.environ.get("SOUNDBOARD_LAB_DEBUG", "") not in ("", "0", "false")
