"""Kernel backend selection.

Hot loops exist twice: a scalar-loop version compiled with numba and a
vectorised numpy version. ``TTS_OPT_BACKEND`` picks one (``numba`` or
``numpy``); the default is numba when it imports, numpy otherwise. The
variable is read on every dispatch so tests can flip it with monkeypatch.
"""
import functools
import os
import warnings

ENV_VAR = "TTS_OPT_BACKEND"
_CHOICES = ("numba", "numpy")


@functools.lru_cache(maxsize=None)
def numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def backend() -> str:
    """Return the active backend name, honouring ``TTS_OPT_BACKEND``."""
    choice = os.environ.get(ENV_VAR, "").strip().lower()
    if choice and choice not in _CHOICES:
        raise ValueError(f"{ENV_VAR} must be one of {_CHOICES}, got {choice!r}")
    if choice == "numpy":
        return "numpy"
    if numba_available():
        return "numba"
    if choice == "numba":
        warnings.warn("numba requested but not importable; using numpy kernels",
                      RuntimeWarning, stacklevel=2)
    return "numpy"


def njit(func):
    """Compile ``func`` in nopython mode, lazily, or return it unchanged."""
    if not numba_available():
        return func
    import numba

    return numba.njit(cache=True, nogil=True)(func)
