"""slicereg: 2D histology to 3D micro-CT deformable slice-to-volume registration."""

from ._kernels import BACKEND as kernel_backend

__all__ = ["kernel_backend"]
__version__ = "0.1.0"
