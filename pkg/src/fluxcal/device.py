"""Ground-truth simulated transmon array.

A DeviceModel composes the transmon spectra with the crosstalk map: applied
voltages produce true qubit frequencies deterministically, and "measured"
frequencies add i.i.d. Gaussian noise per qubit (all qubits are read out in
one simultaneous call). Belief-perturbation helpers model an experimenter
whose characterized parameters differ from the device's ground truth; the
device itself is never mutated.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from fluxcal import transmon
from fluxcal.crosstalk import (
    ArrayGeometry,
    CrosstalkMatrix,
    DimensionMismatch,
    ScalarCalibration,
    flux_from_voltages,
    generate_crosstalk_matrix,
    grid_positions,
)
from fluxcal.seeding import child_rng
from fluxcal.transmon import TransmonParams, freq_from_flux, sample_device_params

PERTURB_TARGETS = ("f_max", "d", "ec_h", "v_phi0", "phi_offset")


@dataclass(frozen=True)
class DeviceModel:
    """Immutable ground truth for one simulated array."""

    n: int
    geom: ArrayGeometry
    params: tuple[TransmonParams, ...]
    s_target: CrosstalkMatrix
    sigma_meas_mhz: float
    seed: int

    def __post_init__(self):
        if len(self.params) != self.n or self.s_target.n != self.n:
            raise DimensionMismatch("params and s_target must match qubit count")
        if self.sigma_meas_mhz < 0:
            raise ValueError("sigma_meas_mhz must be >= 0")

    @property
    def cal(self) -> ScalarCalibration:
        return ScalarCalibration.from_params(self.params)

    def to_json(self) -> str:
        doc = {
            "n": self.n,
            "params": [dataclasses.asdict(p) for p in self.params],
            "s_target": json.loads(self.s_target.to_json()),
            "positions": [list(p) for p in self.geom.positions],
            "adjacency": [list(e) for e in self.geom.adjacency],
            "sigma_meas_mhz": self.sigma_meas_mhz,
            "seed": self.seed,
        }
        return json.dumps(doc, indent=2)

    @staticmethod
    def from_json(text: str) -> "DeviceModel":
        doc = json.loads(text)
        geom = ArrayGeometry(
            tuple(tuple(p) for p in doc["positions"]),
            tuple(tuple(e) for e in doc["adjacency"]),
        )
        return DeviceModel(
            n=doc["n"],
            geom=geom,
            params=tuple(TransmonParams(**p) for p in doc["params"]),
            s_target=CrosstalkMatrix(np.array(doc["s_target"]["s"], dtype=float)),
            sigma_meas_mhz=doc["sigma_meas_mhz"],
            seed=doc["seed"],
        )


def reference_matrix_16() -> CrosstalkMatrix:
    """The packaged 16-qubit crosstalk matrix used as the default target.

    Generated once from the distance-decay model with a fixed seed and
    shipped as data so every 16-qubit default device shares the same matrix.
    """
    text = resources.files("fluxcal.data").joinpath("s_target_16.json").read_text()
    return CrosstalkMatrix.from_json(text)


def make_device(
    n: int,
    seed: int,
    sigma_meas_mhz: float = 0.5,
    s_target: CrosstalkMatrix | None = None,
) -> DeviceModel:
    """Build a simulated array with sampled qubit parameters.

    When no target matrix is supplied, a 16-qubit device uses the packaged
    reference matrix and other sizes generate one from the distance-decay
    model (seeded from the device seed).
    """
    geom = grid_positions(n)
    params = tuple(sample_device_params(child_rng(seed, 0), n))
    if s_target is None:
        if n == 16:
            s_target = reference_matrix_16()
        else:
            s_target = generate_crosstalk_matrix(geom, rng=child_rng(seed, 1))
    return DeviceModel(
        n=n,
        geom=geom,
        params=params,
        s_target=s_target,
        sigma_meas_mhz=sigma_meas_mhz,
        seed=seed,
    )


def true_frequencies(dev: DeviceModel, v: np.ndarray) -> np.ndarray:
    """Noiseless qubit frequencies (GHz) under applied voltages. Deterministic."""
    phi = flux_from_voltages(dev.s_target, dev.cal, v)
    return np.array(
        [freq_from_flux(p, phi_i) for p, phi_i in zip(dev.params, phi)]
    )


def measure_frequencies(
    dev: DeviceModel, v: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """One simultaneous spectroscopy readout of all qubits.

    True frequencies plus i.i.d. Normal(0, sigma_meas) per qubit.
    """
    f = true_frequencies(dev, v)
    if dev.sigma_meas_mhz == 0.0:
        return f
    return f + rng.normal(0.0, dev.sigma_meas_mhz * 1e-3, size=dev.n)


@dataclass(frozen=True)
class ParamErrorSpec:
    """Perturbation applied to the experimenter's believed parameters.

    std is in absolute MHz for f_max and in relative percent for the other
    targets.
    """

    target: str
    std: float

    def __post_init__(self):
        if self.target not in PERTURB_TARGETS:
            raise ValueError(f"unknown target {self.target!r}")
        if self.std < 0:
            raise ValueError("std must be >= 0")


def perturbed_beliefs(
    dev: DeviceModel, spec: ParamErrorSpec, rng: np.random.Generator
) -> list[TransmonParams]:
    """Believed parameter set: ground truth with one parameter perturbed.

    f_max gets an additive Normal(0, std MHz) error; the other targets are
    scaled by (1 + Normal(0, std/100)). Draws that would violate parameter
    invariants are redrawn. The device's ground truth is untouched.
    """
    beliefs = []
    for p in dev.params:
        while True:
            value = getattr(p, spec.target)
            if spec.target == "f_max":
                new = value + rng.normal(0.0, spec.std * 1e-3)
            else:
                new = value * (1.0 + rng.normal(0.0, spec.std / 100.0))
            try:
                beliefs.append(transmon.with_field(p, spec.target, new))
            except ValueError:
                continue
            break
    return beliefs


def perturb_matrix(
    S: CrosstalkMatrix, level: float, rng: np.random.Generator
) -> CrosstalkMatrix:
    """Off-diagonal entries scaled by (1 + Normal(0, level)); diagonal kept at 1."""
    if level < 0:
        raise ValueError("level must be >= 0")
    n = S.n
    factors = 1.0 + rng.normal(0.0, level, size=(n, n))
    s = S.s * factors
    np.fill_diagonal(s, np.diag(S.s))
    return CrosstalkMatrix(s)
