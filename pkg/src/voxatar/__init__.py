"""voxatar: explicit-voxel avatar sculpting by conditioned score distillation.

A desk-scale text/pose-to-3D pipeline: a density+color voxel grid is
optimized by score distillation against a pluggable noise-prediction oracle,
conditioned on part-labeled body renders that share the camera with the
volumetric renderer, under a progressive resolution/radius/focus schedule.
"""

from .kernels import BACKEND_NAME

__version__ = "0.1.0"

__all__ = ["BACKEND_NAME", "__version__"]
