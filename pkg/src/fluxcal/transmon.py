"""Flux-tunable transmon spectrum model.

The qubit transition frequency as a function of external flux (in units of
the flux quantum) is

    f(phi) = (f_max + ec_h) * (d^2 + (1 - d^2) * cos^2(pi*phi))^(1/4) - ec_h

which is periodic in phi with period 1, even in phi, maximal at integer flux
(the "sweet spot") and minimal at half-integer flux. Frequencies and charging
energy are in GHz, flux in Phi0 units, voltages in volts throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from fluxcal.optimizers import OptimizerConfig, minimize

# Measured qubit-parameter distribution for a 16-qubit flip-chip array:
# mean and standard deviation of each spectrum parameter.
FMAX_MEAN_GHZ, FMAX_STD_GHZ = 4.887, 0.110
VPHI0_MEAN_V, VPHI0_STD_V = 29.2, 2.7
D_MEAN, D_STD = 0.35, 0.04
ECH_MEAN_GHZ, ECH_STD_GHZ = 0.1961, 0.0052
OFFSET_ABS_MEAN_PHI0, OFFSET_ABS_STD_PHI0 = 0.0197, 0.0059

# Relative slack for frequencies that overshoot the spectrum range. Noise can
# only push a valid measurement past f_max (or below the minimum) by a hair;
# larger overshoot indicates a corrupted conversion and is raised as an error.
OVERSHOOT_RTOL = 1e-6

PARAM_FIELDS = ("f_max", "ec_h", "d", "v_phi0", "phi_offset")


class OutOfRange(ValueError):
    """Frequency outside the invertible range of the transmon spectrum."""


class FitDiverged(RuntimeError):
    """Spectrum fit failed to reduce the residual below its initial value."""


class InsufficientData(ValueError):
    """Fewer spectroscopy points than free fit parameters."""


@dataclass(frozen=True)
class TransmonParams:
    """Spectrum parameters of one flux-tunable transmon.

    f_max: maximum (sweet-spot) frequency, GHz.
    ec_h: charging energy over Planck constant, GHz.
    d: SQUID junction asymmetry, dimensionless, 0 <= d < 1.
    v_phi0: flux-line voltage that tunes the qubit by one flux quantum, V.
    phi_offset: static flux offset at zero applied voltage, Phi0 units.
    """

    f_max: float
    ec_h: float
    d: float
    v_phi0: float
    phi_offset: float

    def __post_init__(self):
        if not self.f_max > 0:
            raise ValueError(f"f_max must be positive, got {self.f_max}")
        if not self.ec_h > 0:
            raise ValueError(f"ec_h must be positive, got {self.ec_h}")
        if not 0.0 <= self.d < 1.0:
            raise ValueError(f"d must satisfy 0 <= d < 1, got {self.d}")
        if self.v_phi0 == 0.0:
            raise ValueError("v_phi0 must be nonzero")
        if not abs(self.phi_offset) < 0.5:
            raise ValueError(
                f"phi_offset must satisfy |phi_offset| < 0.5, got {self.phi_offset}"
            )

    def as_array(self) -> np.ndarray:
        return np.array([self.f_max, self.ec_h, self.d, self.v_phi0, self.phi_offset])


@dataclass(frozen=True)
class SpectroscopyPoint:
    """One (flux-line voltage, measured qubit frequency) spectroscopy sample."""

    voltage: float
    frequency: float

    def __post_init__(self):
        if not self.frequency > 0:
            raise ValueError(f"frequency must be positive, got {self.frequency}")


def freq_from_flux(params: TransmonParams, phi_ext) -> float | np.ndarray:
    """Qubit frequency (GHz) at external flux phi_ext (Phi0 units).

    Total function: accepts scalars or arrays, any real flux.
    """
    c2 = np.cos(np.pi * phi_ext) ** 2
    radicand = params.d**2 + (1.0 - params.d**2) * c2
    return (params.f_max + params.ec_h) * radicand**0.25 - params.ec_h


def min_frequency(params: TransmonParams) -> float:
    """Spectrum minimum (GHz), reached at half-integer flux."""
    return (params.f_max + params.ec_h) * math.sqrt(params.d) - params.ec_h


def flux_sensitivity(params: TransmonParams, phi_ext: float) -> float:
    """d(frequency)/d(flux) in GHz per Phi0 at the given flux."""
    c2 = math.cos(math.pi * phi_ext) ** 2
    radicand = params.d**2 + (1.0 - params.d**2) * c2
    return (
        -(params.f_max + params.ec_h)
        * 0.25
        * radicand**-0.75
        * (1.0 - params.d**2)
        * math.pi
        * math.sin(2.0 * math.pi * phi_ext)
    )


def flux_from_freq(params: TransmonParams, f: float, predicted_flux: float) -> float:
    """Invert the spectrum: flux (Phi0 units) at which the qubit sits at f.

    The principal inversion yields phi in [0, 0.5]; the spectrum's evenness
    and periodicity make {+phi, -phi} plus any integer equally valid, so the
    candidate closest to predicted_flux is returned. Raises OutOfRange when f
    lies above f_max or below the spectrum minimum by more than a relative
    tolerance of 1e-6 (smaller overshoots are clamped to the nearest branch
    endpoint, absorbing measurement noise at the spectrum extrema).
    """
    f_min = min_frequency(params)
    if f > params.f_max * (1.0 + OVERSHOOT_RTOL):
        raise OutOfRange(
            f"frequency {f} GHz exceeds f_max {params.f_max} GHz beyond tolerance"
        )
    if f < f_min - abs(f_min) * OVERSHOOT_RTOL:
        raise OutOfRange(
            f"frequency {f} GHz below spectrum minimum {f_min} GHz beyond tolerance"
        )
    ratio = (f + params.ec_h) / (params.f_max + params.ec_h)
    arg = (ratio**4 - params.d**2) / (1.0 - params.d**2)
    arg = min(max(arg, 0.0), 1.0)
    phi_principal = math.acos(math.sqrt(arg)) / math.pi  # in [0, 0.5]

    base = math.floor(predicted_flux)
    best = None
    best_dist = math.inf
    for k in (base - 1, base, base + 1):
        for cand in (k + phi_principal, k - phi_principal):
            dist = abs(cand - predicted_flux)
            if dist < best_dist:
                best, best_dist = cand, dist
    return best


def sample_device_params(rng: np.random.Generator, count: int) -> list[TransmonParams]:
    """Draw qubit parameters from the measured device distribution.

    Each parameter is drawn independently from a normal distribution with the
    measured mean/std; the flux offset magnitude gets a uniform random sign.
    Draws violating the TransmonParams invariants are rejected and redrawn.
    """
    if count < 1:
        raise ValueError("count must be >= 1")

    def normal_until(mean, std, ok):
        while True:
            x = rng.normal(mean, std)
            if ok(x):
                return x

    out = []
    for _ in range(count):
        f_max = normal_until(FMAX_MEAN_GHZ, FMAX_STD_GHZ, lambda x: x > 0)
        v_phi0 = normal_until(VPHI0_MEAN_V, VPHI0_STD_V, lambda x: x > 0)
        d = normal_until(D_MEAN, D_STD, lambda x: 0.0 <= x < 1.0)
        ec_h = normal_until(ECH_MEAN_GHZ, ECH_STD_GHZ, lambda x: x > 0)
        off_mag = normal_until(
            OFFSET_ABS_MEAN_PHI0, OFFSET_ABS_STD_PHI0, lambda x: abs(x) < 0.5
        )
        sign = 1.0 if rng.random() < 0.5 else -1.0
        out.append(
            TransmonParams(
                f_max=f_max,
                ec_h=ec_h,
                d=d,
                v_phi0=v_phi0,
                phi_offset=sign * abs(off_mag),
            )
        )
    return out


def _model_freq_and_grads(theta: np.ndarray, voltages: np.ndarray):
    """Model frequency and its gradient w.r.t. all five parameters.

    theta = (f_max, ec_h, d, v_phi0, phi_offset); flux = V/v_phi0 + offset.
    Returns (f, jac) with jac of shape (npoints, 5).
    """
    f_max, ec_h, d, v_phi0, offset = theta
    phi = voltages / v_phi0 + offset
    c2 = np.cos(np.pi * phi) ** 2
    u = d**2 + (1.0 - d**2) * c2
    u_q = u**0.25
    amp = f_max + ec_h
    f = amp * u_q - ec_h

    # dU/dphi = -(1-d^2)*pi*sin(2*pi*phi); df/dU = amp/4 * U^(-3/4)
    df_du = 0.25 * amp * u**-0.75
    du_dphi = -(1.0 - d**2) * np.pi * np.sin(2.0 * np.pi * phi)
    df_dphi = df_du * du_dphi

    jac = np.empty((voltages.size, 5))
    jac[:, 0] = u_q
    jac[:, 1] = u_q - 1.0
    jac[:, 2] = df_du * 2.0 * d * (1.0 - c2)
    jac[:, 3] = df_dphi * (-voltages / v_phi0**2)
    jac[:, 4] = df_dphi
    return f, jac


def spectrum_residual_cost(
    theta: np.ndarray, voltages: np.ndarray, freqs: np.ndarray
) -> tuple[float, np.ndarray]:
    """Sum of squared frequency residuals and its analytic 5-gradient."""
    f, jac = _model_freq_and_grads(theta, voltages)
    r = f - freqs
    return float(r @ r), 2.0 * (jac.T @ r)


def _default_init(voltages: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """Initial guess heuristics for a free spectrum fit.

    f_max from the highest measured frequency; the offset places the flux zero
    at the voltage of that maximum; v_phi0 from twice the max-to-min voltage
    distance when the spectrum minimum lies inside the sweep, else the device
    mean. Asymmetry and charging energy default to the device means.
    """
    order = np.argsort(voltages)
    v_sorted, f_sorted = voltages[order], freqs[order]
    i_max = int(np.argmax(f_sorted))
    i_min = int(np.argmin(f_sorted))
    f_max0 = float(f_sorted[i_max])
    if i_min in (0, len(v_sorted) - 1):
        v_phi0_0 = VPHI0_MEAN_V
    else:
        v_phi0_0 = 2.0 * abs(float(v_sorted[i_max] - v_sorted[i_min]))
        if v_phi0_0 == 0.0:
            v_phi0_0 = VPHI0_MEAN_V
    offset0 = -float(v_sorted[i_max]) / v_phi0_0
    return np.array([f_max0, ECH_MEAN_GHZ, D_MEAN, v_phi0_0, offset0])


def fit_spectrum(
    points: Sequence[SpectroscopyPoint],
    fixed: Iterable[str] = (),
    init: TransmonParams | None = None,
) -> tuple[TransmonParams, float]:
    """Least-squares fit of the spectrum to voltage/frequency samples.

    Parameters named in ``fixed`` are held at their ``init`` values; the rest
    are free. When ``init`` is None all parameters must be free and initial
    guesses are derived from the data. Returns the fitted parameters and the
    rms frequency residual in GHz.

    Raises InsufficientData when there are fewer points than free parameters
    and FitDiverged when the optimizer cannot reduce the residual.
    """
    fixed = tuple(fixed)
    unknown = set(fixed) - set(PARAM_FIELDS)
    if unknown:
        raise ValueError(f"unknown parameter names in fix mask: {sorted(unknown)}")
    free_idx = np.array(
        [i for i, name in enumerate(PARAM_FIELDS) if name not in fixed], dtype=int
    )
    if free_idx.size == 0:
        raise ValueError("at least one parameter must be free")
    if len(points) < free_idx.size:
        raise InsufficientData(
            f"{len(points)} points cannot determine {free_idx.size} free parameters"
        )

    voltages = np.array([p.voltage for p in points], dtype=float)
    freqs = np.array([p.frequency for p in points], dtype=float)

    if init is not None:
        theta0 = init.as_array()
    elif not fixed:
        theta0 = _default_init(voltages, freqs)
    else:
        raise ValueError("init is required when any parameter is fixed")

    # Precondition: optimize dimensionless z with theta = scale * z so that
    # volts-scale and milli-Phi0-scale parameters step comparably.
    scale = np.maximum(np.abs(theta0[free_idx]), 1e-2)

    def objective(z: np.ndarray) -> float:
        theta = theta0.copy()
        theta[free_idx] = scale * z
        cost, _ = spectrum_residual_cost(theta, voltages, freqs)
        return cost

    def gradient(z: np.ndarray) -> np.ndarray:
        theta = theta0.copy()
        theta[free_idx] = scale * z
        _, g = spectrum_residual_cost(theta, voltages, freqs)
        return g[free_idx] * scale

    init_cost = objective(theta0[free_idx] / scale)
    cfg = OptimizerConfig(method="lbfgs", tolerance=1e-16, max_iters=500)
    result = minimize(objective, gradient, theta0[free_idx] / scale, cfg)

    if result.final_cost > init_cost * (1.0 + 1e-12) + 1e-18:
        raise FitDiverged(
            f"residual increased from {init_cost} to {result.final_cost}"
        )

    theta = theta0.copy()
    theta[free_idx] = scale * result.x_star
    # d enters only as d^2 and the offset only modulo a period: canonicalize.
    theta[2] = abs(theta[2])
    theta[4] = (theta[4] + 0.5) % 1.0 - 0.5
    try:
        fitted = TransmonParams(*theta)
    except ValueError as exc:
        raise FitDiverged(f"fit landed on invalid parameters: {exc}") from exc
    rms = math.sqrt(result.final_cost / len(points))
    return fitted, rms


def with_field(params: TransmonParams, name: str, value: float) -> TransmonParams:
    """Copy of params with one field replaced."""
    return replace(params, **{name: value})
