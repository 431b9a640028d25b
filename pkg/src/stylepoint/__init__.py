"""stylepoint: 3D photo stylization from a single RGB-D input.

Pipeline: back-project image + depth to a normalized point cloud, encode
geometry-aware point features with a hierarchical graph-conv encoder,
modulate them with a style image via attention-weighted adaptive instance
normalization, then rasterize + decode to stylized novel views.
"""

import os as _os

# STYLEPOINT_THREADS caps BLAS/kernel parallelism; must land in the
# environment before numpy first loads, so it only takes effect when this
# package is imported before numpy (true for the CLI and service).
_threads = _os.environ.get("STYLEPOINT_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .autodiff import Tape, Tensor

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "__version__"]
