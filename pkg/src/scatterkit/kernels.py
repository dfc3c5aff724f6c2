"""Hot-kernel dispatch: compiled extension when built, numpy fallback otherwise.

Set ``SCATTERKIT_PURE=1`` before import to force the numpy implementations.
"""
import importlib
import os

from . import _kernels_py

_NAMES = ("im2col", "col2im", "maxpool_forward", "maxpool_backward", "masked_mean",
          "nearest_center", "conv_out_size")


def load_backend(name: str):
    """Return the kernel module for ``"compiled"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        return importlib.import_module("scatterkit._kernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> list[str]:
    out = ["python"]
    try:
        load_backend("compiled")
    except ImportError:
        pass
    else:
        out.insert(0, "compiled")
    return out


if os.environ.get("SCATTERKIT_PURE", "") not in ("", "0"):
    BACKEND = "python"
else:
    BACKEND = available_backends()[0]

_impl = load_backend(BACKEND)
im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
masked_mean = _impl.masked_mean
nearest_center = _impl.nearest_center
conv_out_size = _impl.conv_out_size

__all__ = ["BACKEND", "available_backends", "load_backend", *_NAMES]
