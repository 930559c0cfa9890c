"""Hot kernels: compiled Cython core when built, numpy fallback otherwise.

Set ``VDLAB_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
if os.environ.get("VDLAB_PURE_PYTHON") != "1":
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
else:
    _impl = _fallback

volterra_recurrence = _impl.volterra_recurrence
echo_kernel_scan = _impl.echo_kernel_scan

__all__ = ["BACKEND", "volterra_recurrence", "echo_kernel_scan", "_fallback"]
