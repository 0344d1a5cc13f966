"""Kernel backend selection.

At import time the compiled extension (`lopt._ckernels`) is preferred
when it was built; otherwise the numpy kernels serve as fallback. The
environment variable LOPT_BACKEND forces "compiled" or "python".
`set_backend` exists for benchmarks and tests that compare the two in
one process.
"""

import os

from . import _pykernels
from .exceptions import ConfigError

_BACKENDS = {"python": _pykernels}

try:
    from . import _ckernels

    _BACKENDS["compiled"] = _ckernels
except ImportError:
    _ckernels = None


def available_backends():
    return sorted(_BACKENDS)


def get_kernels(name):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ConfigError(
            f"backend {name!r} is not available (have: {available_backends()})"
        ) from None


def set_backend(name):
    global kernels
    kernels = get_kernels(name)
    return kernels


def active_backend():
    return kernels.NAME


_forced = os.environ.get("LOPT_BACKEND")
if _forced:
    kernels = get_kernels(_forced)
elif "compiled" in _BACKENDS:
    kernels = _BACKENDS["compiled"]
else:
    kernels = _pykernels
