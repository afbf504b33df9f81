"""Cucker-Smale consensus and flocking under lossy communication."""
from .dynamics import Trajectory, integrate
from .kernels import ConstantKernel, PowerLawKernel, TabulatedKernel
from .laplacian import Convention, LaplacianOperator, WeightMatrix
from .pe import PeCertificate, check_pe
from .scenario import Scenario, load_scenario
from .state import EnsembleState, VarianceStats

__all__ = [
    "ConstantKernel",
    "Convention",
    "EnsembleState",
    "LaplacianOperator",
    "PeCertificate",
    "PowerLawKernel",
    "Scenario",
    "TabulatedKernel",
    "Trajectory",
    "VarianceStats",
    "WeightMatrix",
    "check_pe",
    "integrate",
    "load_scenario",
]

__version__ = "0.1.0"
