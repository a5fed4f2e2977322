"""Backend selection for the hot training kernels.

A compiled Cython core is preferred when its extension module importable;
otherwise the numpy reference implementation is used. Selection happens at
import time and can be forced with the FAIRCLF_BACKEND environment variable
("compiled" or "python"). `use_backend` exists for tests and benchmarks that
need to switch within one process.
"""

import os

from . import pyref

try:
    from . import _core
except ImportError:
    _core = None

_BACKENDS = {"python": pyref}
if _core is not None:
    _BACKENDS["compiled"] = _core

_impl = pyref


def available_backends():
    return tuple(sorted(_BACKENDS))


def active_backend() -> str:
    return _impl.NAME


def use_backend(name: str):
    """Switch the active kernel backend; returns the previous backend name."""
    global _impl
    if name not in _BACKENDS:
        raise ValueError(
            f"unknown backend {name!r}; available: {', '.join(available_backends())}"
        )
    previous = _impl.NAME
    _impl = _BACKENDS[name]
    return previous


def mlp_forward(w1, b1, w2, b2, w3, b3, x):
    return _impl.mlp_forward(w1, b1, w2, b2, w3, b3, x)


def mlp_backward(w2, w3, x, z1, a1, z2, a2, dlogits):
    return _impl.mlp_backward(w2, w3, x, z1, a1, z2, a2, dlogits)


def adam_update(p, m, v, g, lr, beta1, beta2, eps, t):
    return _impl.adam_update(p, m, v, g, lr, beta1, beta2, eps, t)


_requested = os.environ.get("FAIRCLF_BACKEND")
if _requested:
    use_backend(_requested)
elif _core is not None:
    use_backend("compiled")
