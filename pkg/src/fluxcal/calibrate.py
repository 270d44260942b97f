"""Learning-based crosstalk calibration protocol.

One calibration round: draw constrained target frequencies, convert them to
fluxes through the believed transmon spectra, solve for the voltages under
the current crosstalk estimate, measure all qubits simultaneously, and
convert the measured frequencies back to fluxes. M rounds give a training
set {(V_i, phi_meas_i)} from which each row of the sensitivity matrix is
learned independently by minimizing a mean-squared-error flux cost. A
closed-form least-squares solver provides the verification oracle, and a
per-element direct-measurement baseline is included for comparison.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from fluxcal.crosstalk import (
    CrosstalkMatrix,
    DimensionMismatch,
    ScalarCalibration,
    flux_from_voltages,
    voltages_for_fluxes,
)
from fluxcal.device import DeviceModel, measure_frequencies, true_frequencies
from fluxcal.optimizers import MinimizeResult, OptimizerConfig, minimize
from fluxcal.seeding import child_rng
from fluxcal.transmon import (
    FitDiverged,
    OutOfRange,
    SpectroscopyPoint,
    TransmonParams,
    fit_spectrum,
    flux_from_freq,
    flux_sensitivity,
)

# A target frequency is drawn on the upper branch of each qubit's spectrum,
# so the positive principal branch (flux in (0, 0.5)) is always intended.
UPPER_BRANCH_HINT = 0.25

# Direct measurement: off-diagonal estimates smaller than this are reported
# as zero (below the method's resolution).
DIRECT_RESOLUTION = 1e-4

ATTEMPTS_PER_QUBIT = 1000
MAX_RESTARTS = 100


class ConstraintsUnsatisfiable(RuntimeError):
    """Target sampling exhausted its rejection budget."""


class RankDeficient(np.linalg.LinAlgError):
    """Voltage design matrix does not have full column rank."""


class DegenerateData(ValueError):
    """Scalar retraining has no spread in its regressor."""


@dataclass(frozen=True)
class TargetConstraints:
    """Constraints on randomly drawn target frequencies (GHz).

    Each target lies between min_below_sweet and max_below_sweet below its
    qubit's maximum frequency; grid neighbors stay at least neighbor_detuning
    apart and any pair at least global_detuning apart.
    """

    min_below_sweet: float = 0.1
    max_below_sweet: float = 1.0
    neighbor_detuning: float = 0.2
    global_detuning: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.min_below_sweet < self.max_below_sweet:
            raise ValueError("need 0 < min_below_sweet < max_below_sweet")
        if not self.neighbor_detuning >= self.global_detuning > 0.0:
            raise ValueError("need neighbor_detuning >= global_detuning > 0")

    @staticmethod
    def for_array_size(n: int) -> "TargetConstraints":
        """Default constraints, with detunings shrunk for large arrays.

        The target windows are about 0.9 GHz wide regardless of array size,
        so pairwise detunings must scale like 1/N for the constraints to stay
        satisfiable. At n <= 16 these are the standard defaults.
        """
        if n <= 16:
            return TargetConstraints()
        return TargetConstraints(
            neighbor_detuning=0.2 * 16.0 / n, global_detuning=0.05 * 16.0 / n
        )


@dataclass(frozen=True)
class TrainingSet:
    """M pairs of applied voltage vector and inferred flux vector."""

    voltages: np.ndarray  # (m, n)
    fluxes: np.ndarray  # (m, n)

    def __post_init__(self):
        v = np.asarray(self.voltages, dtype=float)
        f = np.asarray(self.fluxes, dtype=float)
        if v.ndim != 2 or v.shape != f.shape:
            raise DimensionMismatch(
                f"voltages {v.shape} and fluxes {f.shape} must be equal (m, n) arrays"
            )
        if not np.all(np.isfinite(f)) or not np.all(np.isfinite(v)):
            raise ValueError("training data must be finite")
        object.__setattr__(self, "voltages", v)
        object.__setattr__(self, "fluxes", f)

    @property
    def m(self) -> int:
        return self.voltages.shape[0]

    @property
    def n(self) -> int:
        return self.voltages.shape[1]

    def subset(self, indices) -> "TrainingSet":
        return TrainingSet(self.voltages[indices], self.fluxes[indices])

    @staticmethod
    def concat(first: "TrainingSet", second: "TrainingSet") -> "TrainingSet":
        return TrainingSet(
            np.vstack([first.voltages, second.voltages]),
            np.vstack([first.fluxes, second.fluxes]),
        )


@dataclass(frozen=True)
class CalibrationResult:
    """Learned sensitivity matrix plus the scalars it deploys with."""

    s_learned: CrosstalkMatrix
    cal: ScalarCalibration
    row_costs: np.ndarray
    m: int
    seed: int | None = None
    optimizer: OptimizerConfig | None = None

    def to_json(self) -> str:
        cfg = dataclasses.asdict(self.optimizer) if self.optimizer else None
        doc = {
            "s_learned": json.loads(self.s_learned.to_json()),
            "v_phi0": self.cal.v_phi0.tolist(),
            "phi_offset": self.cal.phi_offset.tolist(),
            "per_row_cost": np.asarray(self.row_costs).tolist(),
            "config": cfg,
            "m": self.m,
            "seed": self.seed,
        }
        return json.dumps(doc, indent=2)

    @staticmethod
    def from_json(text: str) -> "CalibrationResult":
        doc = json.loads(text)
        cfg = doc.get("config")
        if cfg is not None:
            cfg["betas"] = tuple(cfg["betas"])
            cfg = OptimizerConfig(**cfg)
        return CalibrationResult(
            s_learned=CrosstalkMatrix(np.array(doc["s_learned"]["s"], dtype=float)),
            cal=ScalarCalibration(
                np.array(doc["v_phi0"], dtype=float),
                np.array(doc["phi_offset"], dtype=float),
            ),
            row_costs=np.array(doc["per_row_cost"], dtype=float),
            m=doc["m"],
            seed=doc.get("seed"),
            optimizer=cfg,
        )


@dataclass(frozen=True)
class ValidationReport:
    """Frequency-targeting errors over a validation set, in MHz."""

    delta_f_mhz: np.ndarray  # (rounds, n), signed f_q - f_target
    targets_ghz: np.ndarray  # (rounds, n)

    @property
    def median_abs_mhz(self) -> float:
        return float(np.median(np.abs(self.delta_f_mhz)))

    @property
    def percentile_5_mhz(self) -> float:
        return float(np.percentile(self.delta_f_mhz, 5.0))

    @property
    def percentile_95_mhz(self) -> float:
        return float(np.percentile(self.delta_f_mhz, 95.0))


def sample_target_frequencies(
    beliefs: Sequence[TransmonParams],
    geom,
    c: TargetConstraints,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw one constrained target-frequency vector (GHz).

    Qubits are processed in a fresh random permutation; each target is
    uniform in its window below the believed sweet spot and rejected until
    it clears the detuning constraints against already-placed targets.
    """
    n = len(beliefs)
    neighbor_sets = [set(geom.neighbors(i)) for i in range(n)]
    for _ in range(MAX_RESTARTS):
        order = rng.permutation(n)
        targets = np.full(n, np.nan)
        placed: list[int] = []
        ok = True
        for q in order:
            window_lo = beliefs[q].f_max - c.max_below_sweet
            window_hi = beliefs[q].f_max - c.min_below_sweet
            for _ in range(ATTEMPTS_PER_QUBIT):
                f = rng.uniform(window_lo, window_hi)
                good = True
                for p in placed:
                    gap = abs(f - targets[p])
                    if gap < c.global_detuning:
                        good = False
                        break
                    if p in neighbor_sets[q] and gap < c.neighbor_detuning:
                        good = False
                        break
                if good:
                    targets[q] = f
                    placed.append(int(q))
                    break
            else:
                ok = False
                break
        if ok:
            return targets
    raise ConstraintsUnsatisfiable(
        f"no valid target vector for n={n} after {MAX_RESTARTS} restarts"
    )


def build_training_set(
    dev: DeviceModel,
    beliefs: Sequence[TransmonParams],
    s_est: CrosstalkMatrix,
    m: int,
    c: TargetConstraints,
    rng: np.random.Generator,
) -> TrainingSet:
    """Acquire m calibration rounds against the simulated device.

    Rounds whose measured frequencies cannot be converted back to fluxes are
    skipped and redrawn; acquisition aborts (re-raising OutOfRange) once more
    than 10% of the requested rounds have failed.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    cal_b = ScalarCalibration.from_params(beliefs)
    max_failures = max(1, math.ceil(0.1 * m))
    voltages = np.empty((m, dev.n))
    fluxes = np.empty((m, dev.n))
    collected = 0
    failures = 0
    while collected < m:
        targets = sample_target_frequencies(beliefs, dev.geom, c, rng)
        phi_pred = np.array(
            [
                flux_from_freq(beliefs[i], targets[i], UPPER_BRANCH_HINT)
                for i in range(dev.n)
            ]
        )
        v = voltages_for_fluxes(s_est, cal_b, phi_pred)
        f_meas = measure_frequencies(dev, v, rng)
        try:
            phi_meas = np.array(
                [
                    flux_from_freq(beliefs[i], f_meas[i], phi_pred[i])
                    for i in range(dev.n)
                ]
            )
        except OutOfRange as exc:
            failures += 1
            if failures > max_failures:
                raise OutOfRange(
                    f"{failures} of {collected + failures} rounds failed "
                    f"flux conversion (limit {max_failures}): {exc}"
                ) from exc
            continue
        voltages[collected] = v
        fluxes[collected] = phi_meas
        collected += 1
    return TrainingSet(voltages, fluxes)


def row_cost(
    s_row: np.ndarray,
    ts: TrainingSet,
    k: int,
    v_phi0_k: float,
    offset_k: float,
) -> tuple[float, np.ndarray]:
    """Mean-squared flux error of row k and its analytic gradient.

    C = (1/M) * sum_i ((phi_meas_i)_k - [s_row . V_i / v_phi0_k + offset_k])^2
    """
    s_row = np.asarray(s_row, dtype=float)
    if s_row.shape != (ts.n,):
        raise DimensionMismatch(f"s_row must have length {ts.n}")
    pred = ts.voltages @ s_row / v_phi0_k + offset_k
    r = ts.fluxes[:, k] - pred
    cost = float(r @ r) / ts.m
    grad = (-2.0 / (ts.m * v_phi0_k)) * (ts.voltages.T @ r)
    return cost, grad


def train_row(
    ts: TrainingSet,
    k: int,
    cal: ScalarCalibration,
    init_row: np.ndarray,
    cfg: OptimizerConfig,
) -> MinimizeResult:
    """Minimize the row-k cost from init_row with the configured optimizer."""
    v_phi0_k = float(cal.v_phi0[k])
    offset_k = float(cal.phi_offset[k])

    def objective(s):
        return row_cost(s, ts, k, v_phi0_k, offset_k)[0]

    def gradient(s):
        return row_cost(s, ts, k, v_phi0_k, offset_k)[1]

    return minimize(objective, gradient, np.asarray(init_row, dtype=float), cfg)


def train_matrix(
    ts: TrainingSet,
    beliefs: ScalarCalibration,
    init: CrosstalkMatrix | None = None,
    cfg: OptimizerConfig | None = None,
    seed: int | None = None,
) -> CalibrationResult:
    """Learn the sensitivity matrix row by row from a training set.

    Rows are trained independently and rescaled to unit diagonal; the
    deployed scalars are the believed ones (self-sensitivity errors are not
    silently absorbed into the calibration, mirroring how the protocol is
    run against hardware).
    """
    if ts.m < 1:
        raise ValueError("training set is empty")
    if beliefs.n != ts.n:
        raise DimensionMismatch("calibration length does not match training set")
    if init is None:
        init = CrosstalkMatrix.identity(ts.n)
    if cfg is None:
        cfg = OptimizerConfig.lbfgs()
    rows = np.empty((ts.n, ts.n))
    costs = np.empty(ts.n)
    for k in range(ts.n):
        try:
            result = train_row(ts, k, beliefs, init.s[k], cfg)
        except Exception as exc:
            raise type(exc)(f"row {k}: {exc}") from exc
        rows[k] = result.x_star
        costs[k] = result.final_cost
    diag = np.diag(rows).copy()
    if np.any(diag == 0.0):
        bad = int(np.flatnonzero(diag == 0.0)[0])
        raise RankDeficient(f"trained row {bad} has zero self-sensitivity")
    s_learned = CrosstalkMatrix(rows / diag[:, None])
    return CalibrationResult(
        s_learned=s_learned,
        cal=beliefs,
        row_costs=costs,
        m=ts.m,
        seed=seed,
        optimizer=cfg,
    )


def closed_form_row(
    ts: TrainingSet, k: int, beliefs: ScalarCalibration
) -> np.ndarray:
    """Exact least-squares solution of the row-k cost via normal equations.

    Independent verification oracle for the gradient-descent training path.
    """
    a = ts.voltages / beliefs.v_phi0[k]
    if np.linalg.matrix_rank(a) < ts.n:
        raise RankDeficient(
            f"design matrix rank {np.linalg.matrix_rank(a)} < {ts.n}"
        )
    y = ts.fluxes[:, k] - beliefs.phi_offset[k]
    gram = a.T @ a
    return np.linalg.solve(gram, a.T @ y)


def validate(
    dev: DeviceModel,
    result: CalibrationResult,
    beliefs: Sequence[TransmonParams],
    n_targets: int,
    c: TargetConstraints,
    rng: np.random.Generator,
) -> ValidationReport:
    """Score a calibration on fresh targets, with noiseless readout.

    For each of n_targets rounds, target frequencies are sampled under the
    constraints, voltages are computed under the learned matrix, and the
    error f_q - f_target is taken from the device's true (noise-free)
    response.
    """
    if n_targets < 1:
        raise ValueError("n_targets must be >= 1")
    delta = np.empty((n_targets, dev.n))
    all_targets = np.empty((n_targets, dev.n))
    for r in range(n_targets):
        targets = sample_target_frequencies(beliefs, dev.geom, c, rng)
        phi = np.array(
            [
                flux_from_freq(beliefs[i], targets[i], UPPER_BRANCH_HINT)
                for i in range(dev.n)
            ]
        )
        v = voltages_for_fluxes(result.s_learned, result.cal, phi)
        f_true = true_frequencies(dev, v)
        delta[r] = (f_true - targets) * 1e3
        all_targets[r] = targets
    return ValidationReport(delta_f_mhz=delta, targets_ghz=all_targets)


def scalar_cost(
    theta: np.ndarray, sv_k: np.ndarray, phi_k: np.ndarray
) -> tuple[float, np.ndarray]:
    """Cost of per-qubit scalars theta = (v_phi0_k, offset_k) and gradient.

    C = (1/M) * sum_i (phi_k_i - [sv_k_i / v_phi0_k + offset_k])^2 with the
    matrix row held fixed inside sv_k = (S @ V_i)_k.
    """
    v, o = theta
    r = phi_k - (sv_k / v + o)
    m = phi_k.size
    dv = (2.0 / m) * float(r @ (sv_k / v**2))
    do = (-2.0 / m) * float(np.sum(r))
    return float(r @ r) / m, np.array([dv, do])


def retrain_scalars(
    ts: TrainingSet,
    s_fixed: CrosstalkMatrix,
    cal: ScalarCalibration,
    which: str = "both",
    cfg: OptimizerConfig | None = None,
) -> ScalarCalibration:
    """Re-fit per-qubit v_phi0 and/or phi_offset with the matrix held fixed.

    which is one of "v_phi0", "phi_offset", "both". Minimizes the same flux
    residuals as row training, starting from the current scalars. Raises
    DegenerateData when the regressor (S @ V)_k has no spread (or is
    identically zero when fitting v_phi0 alone).
    """
    if which not in ("v_phi0", "phi_offset", "both"):
        raise ValueError(f"which must be v_phi0|phi_offset|both, got {which!r}")
    if cfg is None:
        cfg = OptimizerConfig(method="lbfgs", tolerance=1e-16, max_iters=500)
    sv = ts.voltages @ s_fixed.s.T  # (m, n): (S @ V_i)_k in column k
    v_out = cal.v_phi0.copy()
    o_out = cal.phi_offset.copy()
    for k in range(ts.n):
        x = sv[:, k]
        y = ts.fluxes[:, k]
        if which in ("both", "v_phi0") and np.ptp(x) == 0.0:
            if which == "both" or np.all(x == 0.0):
                raise DegenerateData(
                    f"(S @ V)_{k} has no spread; scalars are unidentifiable"
                )
        free_v = which in ("v_phi0", "both")
        free_o = which in ("phi_offset", "both")
        theta0 = np.array([cal.v_phi0[k], cal.phi_offset[k]])
        scale = np.maximum(np.abs(theta0), 1e-2)

        def pack(z):
            theta = theta0.copy()
            if free_v:
                theta[0] = z[0] * scale[0]
            if free_o:
                theta[1] = z[-1] * scale[1]
            return theta

        def objective(z):
            return scalar_cost(pack(z), x, y)[0]

        def gradient(z):
            g = scalar_cost(pack(z), x, y)[1]
            parts = []
            if free_v:
                parts.append(g[0] * scale[0])
            if free_o:
                parts.append(g[1] * scale[1])
            return np.array(parts)

        z0 = []
        if free_v:
            z0.append(theta0[0] / scale[0])
        if free_o:
            z0.append(theta0[1] / scale[1])
        result = minimize(objective, gradient, np.array(z0), cfg)
        theta = pack(result.x_star)
        v_out[k], o_out[k] = theta[0], theta[1]
    return ScalarCalibration(v_out, o_out)


def batched_train(
    dev: DeviceModel,
    beliefs: Sequence[TransmonParams],
    m_batch: int,
    n_batches: int,
    cfg: OptimizerConfig | None = None,
    rng: np.random.Generator | None = None,
    c: TargetConstraints | None = None,
    init: CrosstalkMatrix | None = None,
) -> tuple[CalibrationResult, list[float]]:
    """Iterative calibration: each batch's trained matrix targets the next.

    Training always uses the cumulative samples from all batches so far.
    Returns the final result and, per batch, the median absolute discrepancy
    between the fluxes predicted at acquisition time and the measured ones
    (a proxy for how well each intermediate estimate targets the device).
    """
    if m_batch < 1 or n_batches < 1:
        raise ValueError("m_batch and n_batches must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    if c is None:
        c = TargetConstraints.for_array_size(dev.n)
    cal_b = ScalarCalibration.from_params(beliefs)
    s_est = init if init is not None else CrosstalkMatrix.identity(dev.n)
    cumulative: TrainingSet | None = None
    discrepancies: list[float] = []
    result: CalibrationResult | None = None
    for _ in range(n_batches):
        batch = build_training_set(dev, beliefs, s_est, m_batch, c, rng)
        predicted = np.array(
            [flux_from_voltages(s_est, cal_b, v) for v in batch.voltages]
        )
        discrepancies.append(float(np.median(np.abs(predicted - batch.fluxes))))
        cumulative = (
            batch if cumulative is None else TrainingSet.concat(cumulative, batch)
        )
        result = train_matrix(cumulative, cal_b, init=s_est, cfg=cfg)
        s_est = result.s_learned
    return result, discrepancies


def direct_measure_matrix(
    dev: DeviceModel,
    beliefs: Sequence[TransmonParams],
    n_points: int,
    rng: np.random.Generator,
    bias_detuning: float = 0.5,
    sweep_fraction: float = 0.3,
) -> tuple[CrosstalkMatrix, list[tuple[int, int]]]:
    """Per-element crosstalk estimation baseline.

    For every ordered pair (i, j): bias qubit i below its sweet spot with a
    voltage on its own line, sweep line j across +/-sweep_fraction of the
    mean believed v_phi0, measure qubit i at each step, and fit its spectrum
    holding (f_max, ec_h, d) fixed to extract the volts-per-flux-quantum of
    line j on qubit i. The matrix element is the ratio of the qubit's own
    v_phi0 to that cross value; estimates below resolution are reported as
    zero. Returns the matrix and the list of pairs whose fit failed.

    Uses N*(N-1)*n_points frequency measurements in total.
    """
    if n_points < 3:
        raise ValueError("n_points must be >= 3")
    n = dev.n
    mean_vphi0 = float(np.mean([abs(p.v_phi0) for p in beliefs]))
    sweep = np.linspace(
        -sweep_fraction * mean_vphi0, sweep_fraction * mean_vphi0, n_points
    )
    s = np.eye(n)
    failed: list[tuple[int, int]] = []
    for i in range(n):
        p_i = beliefs[i]
        phi_bias = flux_from_freq(p_i, p_i.f_max - bias_detuning, UPPER_BRANCH_HINT)
        v_bias = p_i.v_phi0 * (phi_bias - p_i.phi_offset)
        slope_at_bias = flux_sensitivity(p_i, phi_bias)
        for j in range(n):
            if j == i:
                continue
            freqs = np.empty(n_points)
            for step, vj in enumerate(sweep):
                v = np.zeros(n)
                v[i] = v_bias
                v[j] = vj
                freqs[step] = measure_frequencies(dev, v, rng)[i]
            slope = float(np.polyfit(sweep, freqs, 1)[0])
            if slope == 0.0:
                continue  # no response at all: element stays 0
            v_init = slope_at_bias / slope
            if abs(p_i.v_phi0 / v_init) < 1e-6:
                continue  # far below resolution; a fit would be meaningless
            init = TransmonParams(
                f_max=p_i.f_max,
                ec_h=p_i.ec_h,
                d=p_i.d,
                v_phi0=v_init,
                phi_offset=v_bias / p_i.v_phi0 + p_i.phi_offset,
            )
            points = [
                SpectroscopyPoint(voltage=float(vj), frequency=float(f))
                for vj, f in zip(sweep, freqs)
            ]
            try:
                fitted, _ = fit_spectrum(
                    points, fixed=("f_max", "ec_h", "d"), init=init
                )
            except FitDiverged:
                failed.append((i, j))
                continue
            element = p_i.v_phi0 / fitted.v_phi0
            s[i, j] = element if abs(element) >= DIRECT_RESOLUTION else 0.0
    return CrosstalkMatrix(s), failed
