"""Mismatched phase-and-additive-noise channel models for nonlinear WDM fiber links.

Submodules
----------
core        grids, signals, physical parameters, seeded random streams
fiber       split-step propagation and digital back-propagation
modem       WDM plans, sinc-pulse modulation and center-channel demodulation
nli         perturbative nonlinear interference coefficients
stats       phase and additive noise statistics from the coefficients
noise       Gauss-Markov and Wiener phase noise, correlated Gaussian noise
estimators  training-phase parameter fits
rates       mismatched mutual-information lower bound
fdpa        subcarrier power allocation
experiment  end-to-end sweeps and reports
cli         command-line interface
"""
from .core import PhysicalParams, SamplingGrid, ComplexSignal, SeededRng
from .errors import CpanError, ConfigError, NumericalError
from .modem import WdmPlan

__version__ = "0.1.0"

__all__ = ["PhysicalParams", "SamplingGrid", "ComplexSignal", "SeededRng", "CpanError",
           "ConfigError", "NumericalError", "WdmPlan", "__version__"]
