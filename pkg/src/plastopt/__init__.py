"""Topology optimization with elasto-plastic analysis and a plastic-strain constraint."""
from .fea import AnalysisFailure, FEModel, SolverOptions, run_analysis
from .material import MaterialParams
from .mesh import BoundarySpec, ConfigurationError, Mesh, build_domain

__version__ = "0.1.0"

__all__ = ["AnalysisFailure", "BoundarySpec", "ConfigurationError", "FEModel", "MaterialParams",
           "Mesh", "SolverOptions", "build_domain", "run_analysis", "__version__"]
