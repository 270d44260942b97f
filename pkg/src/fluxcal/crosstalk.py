"""Linear flux-crosstalk algebra and synthetic crosstalk generation.

An applied flux-line voltage vector V maps to the flux experienced by each
qubit's SQUID as

    phi_i = (S @ V)_i / v_phi0_i + phi_offset_i

where S is the dimensionless N x N sensitivity matrix with unit diagonal.
Entries of S are stored as fractions; percent appears only at I/O boundaries.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

# Distance-decay fit of measured off-diagonal crosstalk (percent) versus
# Euclidean qubit separation x in grid units, plus the observed spread.
DECAY_A = 178.2
DECAY_C_PCT = 0.264
SPREAD_PCT = 0.342

COND_LIMIT = 1e8


class DimensionMismatch(ValueError):
    """Vector or matrix dimensions do not agree."""


class SingularMatrix(np.linalg.LinAlgError):
    """Crosstalk matrix too ill-conditioned to invert reliably."""


class NotPerfectSquare(ValueError):
    """Grid construction requires a perfect-square qubit count."""


class ZeroDiagonal(ValueError):
    """Cannot normalize a matrix with a zero diagonal entry."""


@dataclass(frozen=True)
class CrosstalkMatrix:
    """N x N dimensionless sensitivity matrix."""

    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise DimensionMismatch(f"matrix must be square, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("matrix entries must be finite")
        object.__setattr__(self, "s", s)

    @property
    def n(self) -> int:
        return self.s.shape[0]

    @staticmethod
    def identity(n: int) -> "CrosstalkMatrix":
        return CrosstalkMatrix(np.eye(n))

    def to_json(self) -> str:
        """Row-major JSON with the qubit count and a units tag.

        Python float repr is shortest-round-trip, so serialization is
        bit-exact through json.
        """
        return json.dumps(
            {"n": self.n, "units": "fraction", "s": self.s.tolist()}, indent=2
        )

    @staticmethod
    def from_json(text: str) -> "CrosstalkMatrix":
        doc = json.loads(text)
        if doc.get("units") != "fraction":
            raise ValueError(f"unsupported units tag {doc.get('units')!r}")
        s = np.array(doc["s"], dtype=float)
        if s.shape != (doc["n"], doc["n"]):
            raise DimensionMismatch("matrix shape does not match declared n")
        return CrosstalkMatrix(s)


@dataclass(frozen=True)
class ScalarCalibration:
    """Per-qubit volts-per-flux-quantum and static flux offsets."""

    v_phi0: np.ndarray
    phi_offset: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v_phi0, dtype=float)
        o = np.asarray(self.phi_offset, dtype=float)
        if v.shape != o.shape or v.ndim != 1:
            raise DimensionMismatch("v_phi0 and phi_offset must be equal-length vectors")
        if np.any(v == 0.0):
            raise ValueError("v_phi0 entries must be nonzero")
        object.__setattr__(self, "v_phi0", v)
        object.__setattr__(self, "phi_offset", o)

    @property
    def n(self) -> int:
        return self.v_phi0.size

    @staticmethod
    def from_params(params) -> "ScalarCalibration":
        """Collect the scalar calibration out of per-qubit spectrum params."""
        return ScalarCalibration(
            np.array([p.v_phi0 for p in params], dtype=float),
            np.array([p.phi_offset for p in params], dtype=float),
        )


@dataclass(frozen=True)
class ArrayGeometry:
    """Qubit positions on a plane plus the neighbor adjacency."""

    positions: tuple[tuple[float, float], ...]
    adjacency: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if len(set(self.positions)) != len(self.positions):
            raise ValueError("positions must be distinct")

    @property
    def n(self) -> int:
        return len(self.positions)

    def neighbors(self, i: int) -> list[int]:
        out = []
        for a, b in self.adjacency:
            if a == i:
                out.append(b)
            elif b == i:
                out.append(a)
        return sorted(out)

    def distance(self, i: int, j: int) -> float:
        (xi, yi), (xj, yj) = self.positions[i], self.positions[j]
        return math.hypot(xi - xj, yi - yj)


def grid_positions(n: int) -> ArrayGeometry:
    """Unit-spaced square grid, row-major indexing, 4-connected adjacency."""
    side = math.isqrt(n)
    if side * side != n:
        raise NotPerfectSquare(f"{n} is not a perfect square")
    positions = tuple((float(i % side), float(i // side)) for i in range(n))
    adjacency = []
    for i in range(n):
        x, y = i % side, i // side
        if x + 1 < side:
            adjacency.append((i, i + 1))
        if y + 1 < side:
            adjacency.append((i, i + side))
    return ArrayGeometry(positions, tuple(adjacency))


def flux_from_voltages(
    S: CrosstalkMatrix, cal: ScalarCalibration, v: np.ndarray
) -> np.ndarray:
    """Flux vector (Phi0 units) experienced under applied voltages v."""
    v = np.asarray(v, dtype=float)
    if v.shape != (S.n,) or cal.n != S.n:
        raise DimensionMismatch(
            f"expected length-{S.n} inputs, got v {v.shape}, cal n={cal.n}"
        )
    return (S.s @ v) / cal.v_phi0 + cal.phi_offset


def voltages_for_fluxes(
    S: CrosstalkMatrix, cal: ScalarCalibration, phi: np.ndarray
) -> np.ndarray:
    """Voltages that produce the target flux vector under (S, cal).

    Solves the linear system (no explicit inverse); raises SingularMatrix
    when the condition number estimate exceeds 1e8.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (S.n,) or cal.n != S.n:
        raise DimensionMismatch(
            f"expected length-{S.n} inputs, got phi {phi.shape}, cal n={cal.n}"
        )
    cond = np.linalg.cond(S.s)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularMatrix(f"condition number {cond:.3g} exceeds {COND_LIMIT:.0e}")
    rhs = cal.v_phi0 * (phi - cal.phi_offset)
    return np.linalg.solve(S.s, rhs)


def generate_crosstalk_matrix(
    geom: ArrayGeometry,
    a: float = DECAY_A,
    c: float = DECAY_C_PCT,
    sigma: float = SPREAD_PCT,
    rng: np.random.Generator | None = None,
) -> CrosstalkMatrix:
    """Synthetic crosstalk from the distance-decay model.

    The expected off-diagonal level at Euclidean distance x is
    l(x) = 100/(a*x + 1) + c percent; each element's magnitude is drawn from
    Normal(l, sigma) (absolute value taken: magnitudes are nonnegative) and
    given a uniform random sign. Diagonal is exactly 1.
    """
    if rng is None:
        rng = np.random.default_rng()
    n = geom.n
    s = np.eye(n)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            level_pct = 100.0 / (a * geom.distance(i, j) + 1.0) + c
            magnitude_pct = abs(rng.normal(level_pct, sigma))
            sign = 1.0 if rng.random() < 0.5 else -1.0
            s[i, j] = sign * magnitude_pct / 100.0
    return CrosstalkMatrix(s)


def uniform_level_matrix(
    geom: ArrayGeometry, level: float, rng: np.random.Generator
) -> CrosstalkMatrix:
    """Crosstalk with every off-diagonal element at +/-level (fraction).

    The sign of each element is drawn uniformly; magnitudes are fixed. Used
    to study how calibration degrades as the crosstalk level rises.
    """
    n = geom.n
    s = np.eye(n)
    for i in range(n):
        for j in range(n):
            if i != j:
                s[i, j] = level if rng.random() < 0.5 else -level
    return CrosstalkMatrix(s)


def normalize_unit_diagonal(
    S_raw: CrosstalkMatrix, cal: ScalarCalibration
) -> tuple[CrosstalkMatrix, ScalarCalibration]:
    """Rescale rows to unit diagonal, folding the scale into v_phi0.

    The affine voltage-to-flux map is preserved exactly: row k and v_phi0[k]
    are divided by the same diagonal entry.
    """
    diag = np.diag(S_raw.s)
    if np.any(diag == 0.0):
        raise ZeroDiagonal("matrix has a zero diagonal entry")
    s = S_raw.s / diag[:, None]
    # Remove roundoff on the diagonal: the division is exact there, but be
    # explicit that the normalized form has ones.
    np.fill_diagonal(s, 1.0)
    return CrosstalkMatrix(s), ScalarCalibration(cal.v_phi0 / diag, cal.phi_offset)
