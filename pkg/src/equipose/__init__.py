"""Multi-camera 3D skeleton reconstruction and activity classification for horses."""

from .geometry import CameraModel, Rig, load_calibration, project, projection_matrix, undistort_point
from .lifting import PoseSequence3D, Triangulator, lift_sequence, triangulate_dlt, triangulate_ransac
from .skeleton import SkeletonDefinition, default_skeleton, load_skeleton, pose_statistics
from .tracks import TrackPreprocessor, TrackSet, read_tracks

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "PoseSequence3D",
    "Rig",
    "SkeletonDefinition",
    "TrackPreprocessor",
    "TrackSet",
    "Triangulator",
    "default_skeleton",
    "lift_sequence",
    "load_calibration",
    "load_skeleton",
    "pose_statistics",
    "project",
    "projection_matrix",
    "read_tracks",
    "triangulate_dlt",
    "triangulate_ransac",
    "undistort_point",
]
