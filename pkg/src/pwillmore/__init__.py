"""Finite element p-Willmore flow of triangulated surfaces with conformal regularization."""

from .mesh import Mesh, MeshError, load_mesh, save_mesh, validate_mesh
from .geometry import (
    conformal_distortion,
    enclosed_volume,
    mean_curvature_vector,
    p_willmore_energy,
    surface_area,
    weighted_curvature,
)
from .flow import FlowConfig, FlowState, StepFailure, flow_step, init_state
from .regularize import RegularizeConfig, RegularizeResult, regularize_step

__version__ = "0.1.0"

__all__ = [
    "Mesh",
    "MeshError",
    "load_mesh",
    "save_mesh",
    "validate_mesh",
    "conformal_distortion",
    "enclosed_volume",
    "mean_curvature_vector",
    "p_willmore_energy",
    "surface_area",
    "weighted_curvature",
    "FlowConfig",
    "FlowState",
    "StepFailure",
    "flow_step",
    "init_state",
    "RegularizeConfig",
    "RegularizeResult",
    "regularize_step",
]
