"""Gaussian-splatting renderer whose image decomposes exactly into per-subspace partial renders."""
__version__ = "0.1.0"

from ._kernels import available_backends, backend_name, use_backend
from .partition import PartitionTable, assign_subsets, build_fixed_grid, build_kdtree
from .raster import GradBuffers, RenderedImage, render_backward, render_ray, render_view
from .splat import Camera, Ray, Splat, SplatSet, project, project_splat
