"""Simulation and calibration of magnetic-flux crosstalk in flux-tunable
transmon qubit arrays.

The package models an array of flux-tunable transmons whose frequencies are
set through per-qubit flux lines, generates realistic crosstalk between those
lines, and learns the crosstalk sensitivity matrix from quasi-random
voltage/frequency measurements by row-wise least-squares training.
"""

__version__ = "0.1.0"

from fluxcal.transmon import TransmonParams, freq_from_flux, flux_from_freq
from fluxcal.crosstalk import CrosstalkMatrix, ScalarCalibration, ArrayGeometry
from fluxcal.device import DeviceModel

__all__ = [
    "TransmonParams",
    "freq_from_flux",
    "flux_from_freq",
    "CrosstalkMatrix",
    "ScalarCalibration",
    "ArrayGeometry",
    "DeviceModel",
    "__version__",
]
