"""Metric scale recovery for UAV monocular depth from global elevation models."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source checkout
    __version__ = "0.0.0"

from .camera import Intrinsics, Pose, make_pose
from .errors import GdemScaleError
from .gdem import GdemCloud, densify_cloud, load_gdem, save_gdem
from .groundseg import RoughScaleParams, segment_ground
from .scaling import ScaleParams, lsq_align, tandepth_scale

__all__ = [
    "GdemCloud",
    "GdemScaleError",
    "Intrinsics",
    "Pose",
    "RoughScaleParams",
    "ScaleParams",
    "densify_cloud",
    "load_gdem",
    "lsq_align",
    "make_pose",
    "save_gdem",
    "segment_ground",
    "tandepth_scale",
]
