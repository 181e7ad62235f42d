"""Hanging-string dynamics: certified tension solves, weighted norms, time stepping."""

from hangsim.mesh import Mesh, build_mesh, mesh_from_nodes
from hangsim.tension import solve_bvp, tension_from_state
from hangsim.wnorms import norm_X, norm_Y, norm_report

__version__ = "0.1.0"

__all__ = [
    "Mesh", "build_mesh", "mesh_from_nodes", "solve_bvp", "tension_from_state",
    "norm_X", "norm_Y", "norm_report", "__version__",
]
