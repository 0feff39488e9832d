"""Numerical laboratory for the hierarchical phi^4 field theory over the 3-dimensional p-adics."""

from .covariance import CovarianceKernel, CutoffWindow, c_pairing
from .lattice import LatticeGeometry, sample_gaussian, synthesize
from .padic import Cell, ModelParams, PadicScalar, PadicVector3, Rotation
from .rg import SingleSitePotential, find_fixed_point, one_loop_flow, rg_step
from .testfunctions import TestFunction, fourier, inverse_fourier
from .wick import Couplings, WickContext

__version__ = "0.1.0"

__all__ = [
    "Cell", "Couplings", "CovarianceKernel", "CutoffWindow", "LatticeGeometry", "ModelParams", "PadicScalar",
    "PadicVector3", "Rotation", "SingleSitePotential", "TestFunction", "WickContext", "c_pairing",
    "find_fixed_point", "fourier", "inverse_fourier", "one_loop_flow", "rg_step", "sample_gaussian", "synthesize",
]
