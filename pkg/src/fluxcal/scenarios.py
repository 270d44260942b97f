"""Scenario runner: configured sweeps over seeds, persisted as CSV tables.

Each scenario mirrors one study of the calibration protocol (measurement
noise, training-set size, array-size scaling, belief errors, crosstalk
level, the direct-measurement baseline, optimizer comparison, warm-start
recalibration, spectrum fitting). A run writes one CSV per sweep point, a
summary CSV of medians and percentile bands, and a JSON manifest. The
complete output is a pure function of (config, seed): every task derives its
RNG stream from (run seed, repetition, sweep index), so serial and parallel
execution produce identical bytes.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fluxcal import __version__
from fluxcal.calibrate import (
    CalibrationResult,
    TargetConstraints,
    build_training_set,
    closed_form_row,
    direct_measure_matrix,
    row_cost,
    train_matrix,
    train_row,
    validate,
)
from fluxcal.crosstalk import (
    CrosstalkMatrix,
    ScalarCalibration,
    grid_positions,
    uniform_level_matrix,
)
from fluxcal.device import (
    DeviceModel,
    ParamErrorSpec,
    make_device,
    perturb_matrix,
    perturbed_beliefs,
)
from fluxcal.optimizers import OptimizerConfig
from fluxcal.seeding import child_rng, child_seed
from fluxcal.transmon import (
    SpectroscopyPoint,
    fit_spectrum,
    freq_from_flux,
    sample_device_params,
)

SCENARIO_NAMES = (
    "noise-sweep",
    "m-sweep",
    "scaling",
    "param-error",
    "scalar-error",
    "crosstalk-level",
    "direct-vs-learning",
    "optimizer-compare",
    "recalibration",
    "spectrum-fit",
)

PARAM_ERROR_TARGETS = ("f_max", "d", "ec_h")
SCALAR_ERROR_TARGETS = ("v_phi0", "phi_offset")

DEFAULT_GRIDS = {
    "noise-sweep": (0.0, 0.1, 0.5, 1.0),
    "m-sweep": (5, 10, 20, 30, 50, 75, 100, 150, 200),
    "scaling": (16, 36, 64),
    "crosstalk-level": (2.0, 5.0, 10.0, 15.0),
    "direct-vs-learning": (4, 6, 8, 10, 12, 16, 20),
    "optimizer-compare": ("lbfgs", "sgd", "adam"),
    "recalibration": (5, 10, 20, 30),
    "spectrum-fit": (5, 8, 10, 15, 20, 30),
    # Belief-error grids end at the level where the protocol stops working.
    "param-error": {
        "f_max": (0.0, 0.15, 0.5),  # absolute MHz
        "d": (0.0, 0.3, 1.0),  # relative percent
        "ec_h": (0.0, 3.0, 10.0),
    },
    "scalar-error": {
        "v_phi0": (0.0, 0.03, 0.1),
        "phi_offset": (0.0, 0.3, 1.0),
    },
}

SWEEP_COLUMN = {
    "noise-sweep": "sigma_meas_mhz",
    "m-sweep": "m",
    "scaling": "n",
    "param-error": "error_level",
    "scalar-error": "error_level",
    "crosstalk-level": "level_pct",
    "direct-vs-learning": "n_points",
    "optimizer-compare": "method",
    "recalibration": "m",
    "spectrum-fit": "n_points",
}


class ConfigInvalid(ValueError):
    """Scenario configuration failed schema validation."""


class MissingManifest(FileNotFoundError):
    """Run directory does not contain a manifest."""


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    grid: tuple
    seed: int = 1
    repetitions: int = 10
    out: str = "runs"
    n: int = 16
    sigma_meas_mhz: float = 0.5
    m: int = 100
    device_path: str | None = None
    workers: int = 1
    validation_targets: int = 10
    pool_size: int = 200
    subsets: int = 20
    m_factor: int = 2
    target: str | None = None
    m_learning: int = 30
    perturbation: float = 0.2
    thresholds: tuple[tuple[str, float], ...] = ()

    def config_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["grid"] = list(self.grid)
        doc["thresholds"] = dict(self.thresholds)
        return doc


_SCHEMA = {
    "scenario": str,
    "grid": (list, tuple),
    "seed": int,
    "repetitions": int,
    "out": str,
    "n": int,
    "sigma_meas_mhz": (int, float),
    "m": int,
    "device_path": (str, type(None)),
    "workers": int,
    "validation_targets": int,
    "pool_size": int,
    "subsets": int,
    "m_factor": int,
    "target": (str, type(None)),
    "m_learning": int,
    "perturbation": (int, float),
    "thresholds": dict,
}


def config_from_dict(doc: dict) -> ScenarioConfig:
    """Validate a raw config mapping and fill scenario defaults."""
    if not isinstance(doc, dict):
        raise ConfigInvalid("config must be a JSON object")
    unknown = set(doc) - set(_SCHEMA)
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    scenario = doc.get("scenario")
    if scenario not in SCENARIO_NAMES:
        raise ConfigInvalid(
            f"scenario must be one of {SCENARIO_NAMES}, got {scenario!r}"
        )
    for key, value in doc.items():
        expected = _SCHEMA[key]
        if key == "scenario":
            continue
        if isinstance(value, bool) or not isinstance(value, expected):
            raise ConfigInvalid(f"config key {key!r} has invalid type {type(value)}")

    target = doc.get("target")
    if scenario == "param-error":
        if target not in PARAM_ERROR_TARGETS:
            raise ConfigInvalid(f"param-error requires target in {PARAM_ERROR_TARGETS}")
    elif scenario == "scalar-error":
        if target not in SCALAR_ERROR_TARGETS:
            raise ConfigInvalid(
                f"scalar-error requires target in {SCALAR_ERROR_TARGETS}"
            )

    grid = doc.get("grid")
    if grid is None:
        default = DEFAULT_GRIDS[scenario]
        grid = default[target] if isinstance(default, dict) else default
    if len(grid) == 0:
        raise ConfigInvalid("grid must be non-empty")
    if scenario == "optimizer-compare":
        bad = [g for g in grid if g not in ("lbfgs", "sgd", "adam")]
        if bad:
            raise ConfigInvalid(f"unknown optimizer methods in grid: {bad}")

    merged = dict(doc)
    merged["grid"] = tuple(grid)
    merged["thresholds"] = tuple(sorted(doc.get("thresholds", {}).items()))
    cfg = ScenarioConfig(**merged)
    if cfg.repetitions < 1:
        raise ConfigInvalid("repetitions must be >= 1")
    if cfg.workers < 1:
        raise ConfigInvalid("workers must be >= 1")
    if cfg.scenario == "m-sweep" and max(cfg.grid) > cfg.pool_size:
        raise ConfigInvalid("m-sweep grid values cannot exceed pool_size")
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def _task_device(cfg: ScenarioConfig, rep: int, si: int, **overrides) -> DeviceModel:
    """Device for one task: loaded from file or sampled per repetition."""
    if cfg.device_path is not None:
        with open(cfg.device_path) as fh:
            dev = DeviceModel.from_json(fh.read())
    else:
        dev = make_device(
            overrides.pop("n", cfg.n),
            seed=child_seed(cfg.seed, rep, si, 0),
            sigma_meas_mhz=cfg.sigma_meas_mhz,
            s_target=overrides.pop("s_target", None),
        )
    if overrides.get("sigma_meas_mhz") is not None:
        dev = dataclasses.replace(dev, sigma_meas_mhz=overrides["sigma_meas_mhz"])
    return dev


def _delta_rows(base: dict, report, extra: dict | None = None) -> list[dict]:
    rows = []
    rounds, n = report.delta_f_mhz.shape
    for r in range(rounds):
        for q in range(n):
            row = dict(base)
            row.update(
                {
                    "round": r,
                    "qubit": q,
                    "target_frequency_ghz": float(report.targets_ghz[r, q]),
                    "delta_f_mhz": float(report.delta_f_mhz[r, q]),
                    "flag": "ok",
                }
            )
            if extra:
                row.update(extra)
            rows.append(row)
    return rows


def _failure_row(base: dict, exc: Exception) -> dict:
    row = dict(base)
    row["flag"] = type(exc).__name__
    return row


def _calibrated_report(dev, beliefs, m, rng, s_init=None, constraints=None):
    """Train on a fresh training set and validate; returns (result, report)."""
    c = constraints or TargetConstraints.for_array_size(dev.n)
    s_est = s_init if s_init is not None else CrosstalkMatrix.identity(dev.n)
    ts = build_training_set(dev, beliefs, s_est, m, c, rng)
    result = train_matrix(
        ts, ScalarCalibration.from_params(beliefs), init=s_est, seed=None
    )
    report = validate(dev, result, beliefs, 10, c, rng)
    return result, report


def _matrix_distance(result: CalibrationResult, dev: DeviceModel) -> float:
    return float(np.linalg.norm(result.s_learned.s - dev.s_target.s))


# --- per-scenario repetition runners ---------------------------------------
# Each returns the full list of rows for one repetition across all sweep
# points; rows carry sweep_index for routing into per-point files.


def _run_noise_sweep(cfg: ScenarioConfig, rep: int) -> list[dict]:
    rows = []
    for si, sigma in enumerate(cfg.grid):
        task_seed = child_seed(cfg.seed, rep, si)
        base = {
            "sweep_index": si,
            SWEEP_COLUMN[cfg.scenario]: float(sigma),
            "repetition": rep,
            "seed": task_seed,
        }
        dev = _task_device(cfg, rep, si, sigma_meas_mhz=float(sigma))
        rng = child_rng(cfg.seed, rep, si, 1)
        try:
            result, report = _calibrated_report(dev, dev.params, cfg.m, rng)
        except Exception as exc:
            rows.append(_failure_row(base, exc))
            continue
        rows.extend(
            _delta_rows(base, report, {"matrix_distance": _matrix_distance(result, dev)})
        )
    return rows


def _run_m_sweep(cfg: ScenarioConfig, rep: int) -> list[dict]:
    # One pooled acquisition per repetition; every sweep point trains on
    # random subsets of the pool, so points share the same measured data.
    dev = _task_device(cfg, rep, 0)
    rng_pool = child_rng(cfg.seed, rep, 0, 1)
    c = TargetConstraints.for_array_size(dev.n)
    cal = ScalarCalibration.from_params(dev.params)
    rows = []
    try:
        pool = build_training_set(
            dev, dev.params, CrosstalkMatrix.identity(dev.n), cfg.pool_size, c, rng_pool
        )
    except Exception as exc:
        for si, m in enumerate(cfg.grid):
            task_seed = child_seed(cfg.seed, rep, si)
            rows.append(
                _failure_row(
                    {
                        "sweep_index": si,
                        "m": int(m),
                        "repetition": rep,
                        "seed": task_seed,
                        "subset": 0,
                    },
                    exc,
                )
            )
        return rows
    for si, m in enumerate(cfg.grid):
        task_seed = child_seed(cfg.seed, rep, si)
        rng = child_rng(cfg.seed, rep, si, 2)
        for subset_idx in range(cfg.subsets):
            base = {
                "sweep_index": si,
                "m": int(m),
                "repetition": rep,
                "seed": task_seed,
                "subset": subset_idx,
            }
            picks = rng.choice(cfg.pool_size, size=int(m), replace=False)
            try:
                result = train_matrix(pool.subset(picks), cal)
                report = validate(dev, result, dev.params, 10, c, rng)
            except Exception as exc:
                rows.append(_failure_row(base, exc))
                continue
            rows.extend(
                _delta_rows(
                    base, report, {"matrix_distance": _matrix_distance(result, dev)}
                )
            )
    return rows


def _run_scaling(cfg: ScenarioConfig, rep: int) -> list[dict]:
    rows = []
    for si, n in enumerate(cfg.grid):
        n = int(n)
        task_seed = child_seed(cfg.seed, rep, si)
        base = {
            "sweep_index": si,
            "n": n,
            "repetition": rep,
            "seed": task_seed,
            "m": cfg.m_factor * n,
        }
        dev = _task_device(cfg, rep, si, n=n)
        rng = child_rng(cfg.seed, rep, si, 1)
        try:
            _, report = _calibrated_report(dev, dev.params, cfg.m_factor * n, rng)
        except Exception as exc:
            rows.append(_failure_row(base, exc))
            continue
        rows.extend(_delta_rows(base, report))
    return rows


def _run_belief_error(cfg: ScenarioConfig, rep: int) -> list[dict]:
    rows = []
    for si, level in enumerate(cfg.grid):
        task_seed = child_seed(cfg.seed, rep, si)
        base = {
            "sweep_index": si,
            "error_level": float(level),
            "target": cfg.target,
            "repetition": rep,
            "seed": task_seed,
        }
        dev = _task_device(cfg, rep, si)
        rng = child_rng(cfg.seed, rep, si, 1)
        spec = ParamErrorSpec(target=cfg.target, std=float(level))
        beliefs = perturbed_beliefs(dev, spec, rng)
        try:
            _, report = _calibrated_report(dev, beliefs, cfg.m, rng)
        except Exception as exc:
            rows.append(_failure_row(base, exc))
            continue
        rows.extend(_delta_rows(base, report))
    return rows


def _run_crosstalk_level(cfg: ScenarioConfig, rep: int) -> list[dict]:
    rows = []
    for si, level_pct in enumerate(cfg.grid):
        task_seed = child_seed(cfg.seed, rep, si)
        base = {
            "sweep_index": si,
            "level_pct": float(level_pct),
            "repetition": rep,
            "seed": task_seed,
        }
        geom_rng = child_rng(cfg.seed, rep, si, 2)
        s_target = uniform_level_matrix(
            grid_positions(cfg.n), float(level_pct) / 100.0, geom_rng
        )
        dev = _task_device(cfg, rep, si, s_target=s_target)
        rng = child_rng(cfg.seed, rep, si, 1)
        try:
            _, report = _calibrated_report(dev, dev.params, cfg.m, rng)
        except Exception as exc:
            rows.append(_failure_row(base, exc))
            continue
        rows.extend(_delta_rows(base, report))
    return rows


def _run_direct_vs_learning(cfg: ScenarioConfig, rep: int) -> list[dict]:
    dev = _task_device(cfg, rep, 0)
    c = TargetConstraints.for_array_size(dev.n)
    rng_learn = child_rng(cfg.seed, rep, 0, 3)
    try:
        _, learn_report = _calibrated_report(
            dev, dev.params, cfg.m_learning, rng_learn
        )
        learning_median = learn_report.median_abs_mhz
    except Exception:
        learning_median = float("nan")
    learning_measurements = cfg.m_learning * dev.n
    rows = []
    for si, n_points in enumerate(cfg.grid):
        n_points = int(n_points)
        task_seed = child_seed(cfg.seed, rep, si)
        base = {
            "sweep_index": si,
            "n_points": n_points,
            "repetition": rep,
            "seed": task_seed,
            "learning_median_abs_mhz": learning_median,
            "direct_measurements": dev.n * (dev.n - 1) * n_points,
            "learning_measurements": learning_measurements,
        }
        rng = child_rng(cfg.seed, rep, si, 1)
        try:
            s_direct, failed_pairs = direct_measure_matrix(
                dev, dev.params, n_points, rng
            )
            result = CalibrationResult(
                s_learned=s_direct,
                cal=ScalarCalibration.from_params(dev.params),
                row_costs=np.zeros(dev.n),
                m=0,
            )
            report = validate(dev, result, dev.params, 10, c, rng)
        except Exception as exc:
            rows.append(_failure_row(base, exc))
            continue
        rows.extend(_delta_rows(base, report, {"failed_fits": len(failed_pairs)}))
    return rows


def _optimizer_for(method: str) -> OptimizerConfig:
    if method == "lbfgs":
        return OptimizerConfig.lbfgs()
    if method == "sgd":
        return OptimizerConfig.sgd()
    return OptimizerConfig.adam()


def _run_optimizer_compare(cfg: ScenarioConfig, rep: int) -> list[dict]:
    dev = _task_device(cfg, rep, 0)
    c = TargetConstraints.for_array_size(dev.n)
    cal = ScalarCalibration.from_params(dev.params)
    rng = child_rng(cfg.seed, rep, 0, 1)
    ts = build_training_set(
        dev, dev.params, CrosstalkMatrix.identity(dev.n), cfg.m, c, rng
    )
    k = rep % dev.n
    oracle_row = closed_form_row(ts, k, cal)
    oracle_cost = row_cost(oracle_row, ts, k, cal.v_phi0[k], cal.phi_offset[k])[0]
    target_cost = oracle_cost + 1e-6
    rows = []
    for si, method in enumerate(cfg.grid):
        task_seed = child_seed(cfg.seed, rep, si)
        base = {
            "sweep_index": si,
            "method": method,
            "repetition": rep,
            "seed": task_seed,
            "row": k,
        }
        try:
            result = train_row(ts, k, cal, np.eye(dev.n)[k], _optimizer_for(method))
        except Exception as exc:
            rows.append(_failure_row(base, exc))
            continue
        reached = [
            t for t, cost in enumerate(result.cost_trace) if cost <= target_cost
        ]
        row = dict(base)
        row.update(
            {
                "iterations_run": result.iterations,
                "iterations_to_target": reached[0] if reached else -1,
                "final_cost": result.final_cost,
                "oracle_cost": oracle_cost,
                "converged": int(result.converged),
                "flag": "ok",
            }
        )
        rows.append(row)
    return rows


def _run_recalibration(cfg: ScenarioConfig, rep: int) -> list[dict]:
    rows = []
    for si, m in enumerate(cfg.grid):
        task_seed = child_seed(cfg.seed, rep, si)
        base = {
            "sweep_index": si,
            "m": int(m),
            "repetition": rep,
            "seed": task_seed,
            "perturbation": cfg.perturbation,
        }
        dev = _task_device(cfg, rep, si)
        rng = child_rng(cfg.seed, rep, si, 1)
        s_init = perturb_matrix(dev.s_target, cfg.perturbation, rng)
        try:
            _, report = _calibrated_report(
                dev, dev.params, int(m), rng, s_init=s_init
            )
        except Exception as exc:
            rows.append(_failure_row(base, exc))
            continue
        rows.extend(_delta_rows(base, report))
    return rows


def _run_spectrum_fit(cfg: ScenarioConfig, rep: int) -> list[dict]:
    rows = []
    for si, n_points in enumerate(cfg.grid):
        n_points = int(n_points)
        task_seed = child_seed(cfg.seed, rep, si)
        base = {
            "sweep_index": si,
            "n_points": n_points,
            "repetition": rep,
            "seed": task_seed,
        }
        rng = child_rng(cfg.seed, rep, si, 1)
        true = sample_device_params(rng, 1)[0]
        voltages = np.linspace(-0.3 * true.v_phi0, 0.3 * true.v_phi0, n_points)
        freqs = np.array(
            [
                freq_from_flux(true, v / true.v_phi0 + true.phi_offset)
                for v in voltages
            ]
        )
        freqs = freqs + rng.normal(0.0, cfg.sigma_meas_mhz * 1e-3, size=n_points)
        points = [
            SpectroscopyPoint(voltage=float(v), frequency=float(f))
            for v, f in zip(voltages, freqs)
        ]
        try:
            fitted, rms = fit_spectrum(points)
        except Exception as exc:
            rows.append(_failure_row(base, exc))
            continue
        row = dict(base)
        row.update(
            {
                "fmax_err_mhz": abs(fitted.f_max - true.f_max) * 1e3,
                "d_err_pct": abs(fitted.d - true.d) / true.d * 100.0,
                "ec_err_pct": abs(fitted.ec_h - true.ec_h) / true.ec_h * 100.0,
                "vphi0_err_pct": abs(fitted.v_phi0 - true.v_phi0)
                / true.v_phi0
                * 100.0,
                "offset_err_pct": abs(fitted.phi_offset - true.phi_offset)
                / abs(true.phi_offset)
                * 100.0,
                "rms_ghz": rms,
                "flag": "ok",
            }
        )
        rows.append(row)
    return rows


_RUNNERS = {
    "noise-sweep": _run_noise_sweep,
    "m-sweep": _run_m_sweep,
    "scaling": _run_scaling,
    "param-error": _run_belief_error,
    "scalar-error": _run_belief_error,
    "crosstalk-level": _run_crosstalk_level,
    "direct-vs-learning": _run_direct_vs_learning,
    "optimizer-compare": _run_optimizer_compare,
    "recalibration": _run_recalibration,
    "spectrum-fit": _run_spectrum_fit,
}

_ROW_FIELDS = {
    "noise-sweep": (
        "sweep_index",
        "sigma_meas_mhz",
        "repetition",
        "seed",
        "round",
        "qubit",
        "target_frequency_ghz",
        "delta_f_mhz",
        "matrix_distance",
        "flag",
    ),
    "m-sweep": (
        "sweep_index",
        "m",
        "repetition",
        "seed",
        "subset",
        "round",
        "qubit",
        "target_frequency_ghz",
        "delta_f_mhz",
        "matrix_distance",
        "flag",
    ),
    "scaling": (
        "sweep_index",
        "n",
        "repetition",
        "seed",
        "m",
        "round",
        "qubit",
        "target_frequency_ghz",
        "delta_f_mhz",
        "flag",
    ),
    "param-error": (
        "sweep_index",
        "error_level",
        "target",
        "repetition",
        "seed",
        "round",
        "qubit",
        "target_frequency_ghz",
        "delta_f_mhz",
        "flag",
    ),
    "crosstalk-level": (
        "sweep_index",
        "level_pct",
        "repetition",
        "seed",
        "round",
        "qubit",
        "target_frequency_ghz",
        "delta_f_mhz",
        "flag",
    ),
    "direct-vs-learning": (
        "sweep_index",
        "n_points",
        "repetition",
        "seed",
        "learning_median_abs_mhz",
        "direct_measurements",
        "learning_measurements",
        "failed_fits",
        "round",
        "qubit",
        "target_frequency_ghz",
        "delta_f_mhz",
        "flag",
    ),
    "optimizer-compare": (
        "sweep_index",
        "method",
        "repetition",
        "seed",
        "row",
        "iterations_run",
        "iterations_to_target",
        "final_cost",
        "oracle_cost",
        "converged",
        "flag",
    ),
    "recalibration": (
        "sweep_index",
        "m",
        "repetition",
        "seed",
        "perturbation",
        "round",
        "qubit",
        "target_frequency_ghz",
        "delta_f_mhz",
        "flag",
    ),
    "spectrum-fit": (
        "sweep_index",
        "n_points",
        "repetition",
        "seed",
        "fmax_err_mhz",
        "d_err_pct",
        "ec_err_pct",
        "vphi0_err_pct",
        "offset_err_pct",
        "rms_ghz",
        "flag",
    ),
}
_ROW_FIELDS["scalar-error"] = _ROW_FIELDS["param-error"]


def _summarize(scenario: str, value, rows: list[dict]) -> dict:
    ok = [r for r in rows if r.get("flag") == "ok"]
    out = {
        "sweep_value": value,
        "rows": len(rows),
        "failed_rows": len(rows) - len(ok),
    }
    if scenario == "optimizer-compare":
        reached = [r["iterations_to_target"] for r in ok if r["iterations_to_target"] >= 0]
        out["median_iterations_to_target"] = (
            float(np.median(reached)) if reached else -1.0
        )
        out["reached_fraction"] = len(reached) / len(ok) if ok else 0.0
        out["median_final_cost"] = (
            float(np.median([r["final_cost"] for r in ok])) if ok else float("nan")
        )
        return out
    if scenario == "spectrum-fit":
        for col in (
            "fmax_err_mhz",
            "d_err_pct",
            "ec_err_pct",
            "vphi0_err_pct",
            "offset_err_pct",
        ):
            out[f"mean_{col}"] = (
                float(np.mean([r[col] for r in ok])) if ok else float("nan")
            )
        return out
    deltas = np.array([r["delta_f_mhz"] for r in ok], dtype=float)
    if deltas.size:
        out["median_abs_delta_f_mhz"] = float(np.median(np.abs(deltas)))
        out["p5_delta_f_mhz"] = float(np.percentile(deltas, 5.0))
        out["p95_delta_f_mhz"] = float(np.percentile(deltas, 95.0))
    else:
        out["median_abs_delta_f_mhz"] = float("nan")
        out["p5_delta_f_mhz"] = float("nan")
        out["p95_delta_f_mhz"] = float("nan")
    if scenario == "direct-vs-learning" and ok:
        out["learning_median_abs_mhz"] = float(
            np.median([r["learning_median_abs_mhz"] for r in ok])
        )
        out["budget_ratio"] = float(
            ok[0]["direct_measurements"] / ok[0]["learning_measurements"]
        )
    return out


def config_hash(doc: dict) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _run_one_rep(args: tuple) -> list[dict]:
    cfg, rep = args
    return _RUNNERS[cfg.scenario](cfg, rep)


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None) -> dict:
    """Execute a scenario sweep and persist results; returns the manifest.

    Writes point_XX.csv per sweep point, summary.csv, and manifest.json into
    the output directory. Deterministic given (config, seed); repetitions may
    run in parallel worker processes without changing any output byte.
    """
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, rep) for rep in range(cfg.repetitions)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            per_rep = list(pool.map(_run_one_rep, tasks))
    else:
        per_rep = [_run_one_rep(t) for t in tasks]

    fields = _ROW_FIELDS[cfg.scenario]
    points = []
    summary_rows = []
    for si, value in enumerate(cfg.grid):
        rows = [
            row for rep_rows in per_rep for row in rep_rows if row["sweep_index"] == si
        ]
        fname = f"point_{si:02d}.csv"
        with open(out / fname, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields, restval="")
            writer.writeheader()
            writer.writerows(rows)
        points.append({"index": si, "value": value, "file": fname})
        summary_rows.append({"sweep_index": si, **_summarize(cfg.scenario, value, rows)})

    summary_fields = list(summary_rows[0].keys())
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=summary_fields, restval="")
        writer.writeheader()
        writer.writerows(summary_rows)

    doc = cfg.config_dict()
    manifest = {
        "scenario": cfg.scenario,
        "config": doc,
        "config_hash": config_hash(doc),
        "seed": cfg.seed,
        "version": __version__,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "points": points,
        "summary": "summary.csv",
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def report(run_dir: str | Path) -> tuple[str, int]:
    """Summarize a completed run; returns (table text, exit status).

    Exit status is nonzero when a max_median_mhz threshold embedded in the
    run's config is violated at any sweep point.
    """
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise MissingManifest(f"no manifest.json in {run_dir}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    with open(run_dir / manifest["summary"]) as fh:
        summary = list(csv.DictReader(fh))

    headers = list(summary[0].keys()) if summary else []
    widths = [
        max(len(h), *(len(row[h]) for row in summary)) if summary else len(h)
        for h in headers
    ]
    lines = [
        f"scenario: {manifest['scenario']}  seed: {manifest['seed']}  "
        f"version: {manifest['version']}"
    ]
    lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    for row in summary:
        lines.append("  ".join(row[h].ljust(w) for h, w in zip(headers, widths)))

    status = 0
    thresholds = dict(manifest["config"].get("thresholds", {}))
    max_median = thresholds.get("max_median_mhz")
    if max_median is not None:
        for row in summary:
            value = row.get("median_abs_delta_f_mhz", "")
            if value and float(value) > float(max_median):
                lines.append(
                    f"THRESHOLD VIOLATED at sweep point {row['sweep_index']}: "
                    f"median {value} MHz > {max_median} MHz"
                )
                status = 1
    table = "\n".join(lines)
    return table, status
