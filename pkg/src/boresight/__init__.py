"""Depth-only markerless scanner registration toolkit."""

__version__ = "0.1.0"

from .geometry import (
    CameraIntrinsics,
    DepthFrame,
    RigidTransform,
    backproject,
    estimate_rigid_from_correspondences,
    median_filter,
    occlusion_mask,
    voxel_downsample,
)

__all__ = [
    "CameraIntrinsics",
    "DepthFrame",
    "RigidTransform",
    "backproject",
    "estimate_rigid_from_correspondences",
    "median_filter",
    "occlusion_mask",
    "voxel_downsample",
    "__version__",
]
