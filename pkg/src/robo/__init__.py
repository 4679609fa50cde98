"""Distributed pose graph optimization with overlapping robot domains."""

from .evaluation import Tracker, centralized_reference, global_cost, rmse_ape
from .g2o import read_g2o, save_g2o, write_g2o
from .geometry import Pose
from .graph import Estimates, PoseGraph, RelativeMeasurement
from .initialization import initialize
from .partition import BlockAssignment, build_overlap_block, sequential_partition
from .runtime import ScheduleSpec, run
from .synthetic import SyntheticSpec, generate_synthetic

__all__ = [
    "BlockAssignment", "Estimates", "Pose", "PoseGraph", "RelativeMeasurement", "ScheduleSpec",
    "SyntheticSpec", "Tracker", "build_overlap_block", "centralized_reference", "generate_synthetic",
    "global_cost", "initialize", "read_g2o", "rmse_ape", "run", "save_g2o", "sequential_partition",
    "write_g2o",
]
__version__ = "0.1.0"
