"""Elementwise kernels, compiled when the extension is built.

Set ``MULTIPLEXNET_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

if os.environ.get("MULTIPLEXNET_PURE_PYTHON"):
    from ._kernels_py import *  # noqa: F401,F403
    from ._kernels_py import BACKEND
else:
    try:
        from ._kernels import *  # noqa: F401,F403
        from ._kernels import BACKEND
    except ImportError:
        from ._kernels_py import *  # noqa: F401,F403
        from ._kernels_py import BACKEND

__all__ = ["softplus", "sigmoid", "log_expm1", "log_expm1_grad", "interval",
           "BACKEND"]
