"""Dilute Stokes suspensions: particle dynamics, a mean-field kinetic solver and transport metrics.

Submodules are imported lazily so that the command-line entry point can
configure numba threading before numba loads.
"""
import importlib

from .errors import (
    CapacityError,
    ContractionError,
    ConvergenceError,
    GuardError,
    SetupError,
    StokesMFError,
    ValidationError,
)

__version__ = "0.1.0"

_EXPORTS = {
    "stokeslet": "kernels",
    "stokeslet_grad": "kernels",
    "stokeslet_grad_apply": "kernels",
    "stokes_pair_sum": "kernels",
    "Sphere": "particles",
    "SlenderFiber": "particles",
    "ActivityModel": "particles",
    "ZeroFlow": "flows",
    "LinearFlow": "flows",
    "RegularizedStokeslet": "flows",
    "TabulatedFlow": "flows",
    "background_eval": "flows",
    "SuspensionParams": "simulation",
    "SuspensionState": "simulation",
    "compute_velocities": "simulation",
    "KineticEnsemble": "kinetic",
    "solve_velocity_field": "kinetic",
    "wasserstein_exact": "transport",
    "wasserstein_bottleneck": "transport",
    "wasserstein_sinkhorn": "transport",
}


def __getattr__(name):
    mod = _EXPORTS.get(name)
    if mod is None:
        raise AttributeError(f"module 'stokesmf' has no attribute {name!r}")
    return getattr(importlib.import_module(f".{mod}", __name__), name)


__all__ = [
    "CapacityError",
    "ContractionError",
    "ConvergenceError",
    "GuardError",
    "SetupError",
    "StokesMFError",
    "ValidationError",
    *_EXPORTS,
]
