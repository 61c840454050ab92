"""Numerical laboratory for the energy flux of rough incompressible velocity fields."""

from .domains import Box, PeriodicBox, Polygon, WholeSpace
from .errors import (
    BoundaryError,
    DomainError,
    DrfluxError,
    KernelValidationError,
    ParameterError,
    PreconditionError,
    RefusalError,
    ScenarioError,
)
from .fields import catalog, increment, mollify, total_variation, verify_increment_bound
from .flows import FlowField
from .flux import TestFunction, directional_flux, flux_convergence, pairing, reconstruct_pairing, total_flux
from .kernels import make_bump, rescale, validate
from .optimize import certificate, conservation_report, flow_averaged_kernel, objective, polar_decompose

__version__ = "0.1.0"

__all__ = [
    "Box", "PeriodicBox", "Polygon", "WholeSpace",
    "BoundaryError", "DomainError", "DrfluxError", "KernelValidationError", "ParameterError",
    "PreconditionError", "RefusalError", "ScenarioError",
    "catalog", "increment", "mollify", "total_variation", "verify_increment_bound",
    "FlowField",
    "TestFunction", "directional_flux", "flux_convergence", "pairing", "reconstruct_pairing", "total_flux",
    "make_bump", "rescale", "validate",
    "certificate", "conservation_report", "flow_averaged_kernel", "objective", "polar_decompose",
]
