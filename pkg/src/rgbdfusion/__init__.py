"""Offline RGB-D odometry and volumetric reconstruction.

Frame-to-frame visual odometry (keypoints, binary descriptors, homography
filtering, sampled rigid alignment) seeds point-to-plane ICP against a TSDF
raycast; depth is fused into the TSDF and a mesh is extracted with marching
cubes. Trajectories are evaluated with ATE / RPE.
"""
from .geometry import Intrinsics, Pose, compose, invert

__version__ = "0.1.0"
__all__ = ["Intrinsics", "Pose", "compose", "invert", "__version__"]
