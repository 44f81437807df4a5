"""Hot numeric kernels with two interchangeable backends.

The numba backend is used when numba imports cleanly, unless the environment
variable ``RGBDFUSION_DISABLE_NUMBA`` is set to a truthy value, in which case
everything runs on the vectorized numpy fallback. Both backends take the same
arguments and return the same results up to floating point round-off.
"""
import importlib
import os

_NAMES = (
    "bilateral_filter",
    "tsdf_integrate",
    "tsdf_raycast",
    "mc_edge_triangles",
    "hamming_matrix",
    "shape_interest",
    "icp_reduce",
)


def numba_disabled() -> bool:
    return os.environ.get("RGBDFUSION_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


def load_backend(name: str):
    """Return the kernel module for ``"numba"`` or ``"numpy"``."""
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    return importlib.import_module(f"._{name}", __name__)


def _select():
    if not numba_disabled():
        try:
            return "numba", load_backend("numba")
        except ImportError:
            pass
    return "numpy", load_backend("numpy")


BACKEND, _impl = _select()

bilateral_filter = _impl.bilateral_filter
tsdf_integrate = _impl.tsdf_integrate
tsdf_raycast = _impl.tsdf_raycast
mc_edge_triangles = _impl.mc_edge_triangles
hamming_matrix = _impl.hamming_matrix
shape_interest = _impl.shape_interest
icp_reduce = _impl.icp_reduce

__all__ = ["BACKEND", "load_backend", "numba_disabled", *_NAMES]
