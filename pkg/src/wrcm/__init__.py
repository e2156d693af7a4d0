"""Simulation and analysis of weight-dependent random connection models."""

from .model import Geometry, Kernel, ModelError, ModelParams, Profile, Window, connection_prob, profile_constants
from .sampler import Graph, MarkedPointSet, Method, add_palm_origin, sample, sample_graph, sample_points, thin_edges

__all__ = [
    "Geometry", "Graph", "Kernel", "MarkedPointSet", "Method", "ModelError", "ModelParams", "Profile", "Window",
    "add_palm_origin", "connection_prob", "profile_constants", "sample", "sample_graph", "sample_points",
    "thin_edges",
]
__version__ = "0.1.0"
