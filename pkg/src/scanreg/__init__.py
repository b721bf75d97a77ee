"""Scan-to-map LiDAR registration with information-driven feature selection."""

from scanreg.geometry import Pose, TangentDelta, retract, skew, transform_point
from scanreg.cloud_io import Scan, TrajectoryRecord, read_scan, read_trajectory, write_trajectory
from scanreg.association import FeatureMap, LineModel, PlaneModel
from scanreg.selector import (
    FeatureCandidate,
    SelectionResult,
    SelectorConfig,
    brute_force_select,
    metric_eval,
    random_select,
    simple_greedy_select,
    stochastic_greedy_select,
)
from scanreg.solver import SolveResult, SolverConfig, solve_pose

__version__ = "0.1.0"
