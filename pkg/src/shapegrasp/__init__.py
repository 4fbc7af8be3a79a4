"""Robust grasp planning over sampled shape completions.

A dropout-equipped 3D occupancy network turns one partial view into a set
of plausible completed shapes; grasp candidates planned on the mean shape
are ranked by their average analytic wrench quality across all samples.
"""

__version__ = "0.1.0"

from .meshing import Camera, TriMesh, depth_render, marching_cubes, ray_intersect, shape_complete_mesh
from .planner import Grasp, GraspScoreTable, PlanConfig, evaluate_grasp, plan_candidates, rank_grasps, robust_plan
from .voxelgrid import PointCloud, VoxelGrid, jaccard, mean_grid, threshold, voxelize
from .wrench import Contact, GraspQuality, WrenchSet, epsilon_measure, force_closure, friction_cone_edges, v_measure, wrench_set

__all__ = [
    "Camera",
    "Contact",
    "Grasp",
    "GraspQuality",
    "GraspScoreTable",
    "PlanConfig",
    "PointCloud",
    "TriMesh",
    "VoxelGrid",
    "WrenchSet",
    "depth_render",
    "epsilon_measure",
    "evaluate_grasp",
    "force_closure",
    "friction_cone_edges",
    "jaccard",
    "marching_cubes",
    "mean_grid",
    "plan_candidates",
    "rank_grasps",
    "ray_intersect",
    "robust_plan",
    "shape_complete_mesh",
    "threshold",
    "v_measure",
    "voxelize",
    "wrench_set",
]
