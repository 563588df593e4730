"""Backend switch for the hot numeric kernels.

By default kernels are compiled with numba's ``njit``. Setting the
environment variable ``STACKPUSH_NUMBA=0`` (or numba being absent) selects
the pure-NumPy interpreter path instead; the two paths run the same source.
The flag is read once at import time because jitting happens at module load.
"""

import os


def _numba_requested() -> bool:
    flag = os.environ.get("STACKPUSH_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


def _detect_backend() -> bool:
    if not _numba_requested():
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _detect_backend()

if NUMBA_ENABLED:
    from numba import njit as _njit

    def maybe_njit(*args, **kwargs):
        # fastmath stays off: reordering would break bit-exact replays
        kwargs.setdefault("cache", True)
        if args and callable(args[0]):
            return _njit(cache=kwargs["cache"])(args[0])
        return _njit(*args, **kwargs)

else:

    def maybe_njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
