"""Command-line surface.

Subcommands: device generate, characterize, calibrate, validate,
experiment <scenario>, report. Configuration files are JSON (schema-checked
at load); see the README for the format and examples.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from fluxcal import __version__
from fluxcal.calibrate import (
    CalibrationResult,
    TargetConstraints,
    build_training_set,
    train_matrix,
    validate,
)
from fluxcal.crosstalk import CrosstalkMatrix, ScalarCalibration
from fluxcal.device import DeviceModel, make_device, measure_frequencies
from fluxcal.scenarios import (
    SCENARIO_NAMES,
    ConfigInvalid,
    config_from_dict,
    load_config,
    report,
    run_scenario,
)
from fluxcal.seeding import child_rng
from fluxcal.transmon import SpectroscopyPoint, fit_spectrum


def _load_device(path: str) -> DeviceModel:
    with open(path) as fh:
        return DeviceModel.from_json(fh.read())


def _cmd_device_generate(args) -> int:
    dev = make_device(args.n, seed=args.seed, sigma_meas_mhz=args.sigma_meas)
    out = Path(args.out or "device.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dev.to_json())
    print(f"wrote {out} (n={dev.n}, sigma_meas={dev.sigma_meas_mhz} MHz)")
    return 0


def _cmd_characterize(args) -> int:
    """Single-qubit spectroscopy sweeps and spectrum fits for every qubit."""
    dev = _load_device(args.device)
    rng = child_rng(args.seed, 0)
    sweep_half = 0.3 * 29.2  # nominal volts-per-flux-quantum scale
    results = []
    for i in range(dev.n):
        voltages = np.linspace(-sweep_half, sweep_half, args.points)
        points = []
        for v_i in voltages:
            v = np.zeros(dev.n)
            v[i] = v_i
            f = measure_frequencies(dev, v, rng)[i]
            points.append(SpectroscopyPoint(voltage=float(v_i), frequency=float(f)))
        fitted, rms = fit_spectrum(points)
        results.append({**dataclasses.asdict(fitted), "rms_ghz": rms})
    out = Path(args.out or "characterization.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"qubits": results}, indent=2))
    print(f"wrote {out} ({dev.n} qubits, {args.points} points each)")
    return 0


def _cmd_calibrate(args) -> int:
    dev = _load_device(args.device)
    rng = child_rng(args.seed, 1)
    c = TargetConstraints.for_array_size(dev.n)
    beliefs = dev.params
    ts = build_training_set(
        dev, beliefs, CrosstalkMatrix.identity(dev.n), args.m, c, rng
    )
    result = train_matrix(
        ts, ScalarCalibration.from_params(beliefs), seed=args.seed
    )
    out = Path(args.out or "calibration.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(result.to_json())
    print(
        f"wrote {out} (m={args.m}, max row cost {float(np.max(result.row_costs)):.3e})"
    )
    return 0


def _cmd_validate(args) -> int:
    dev = _load_device(args.device)
    with open(args.result) as fh:
        result = CalibrationResult.from_json(fh.read())
    rng = child_rng(args.seed, 2)
    c = TargetConstraints.for_array_size(dev.n)
    rep = validate(dev, result, dev.params, args.targets, c, rng)
    print(
        f"median |delta_f| = {rep.median_abs_mhz:.4f} MHz  "
        f"(5th..95th: {rep.percentile_5_mhz:.4f} .. {rep.percentile_95_mhz:.4f} MHz)"
    )
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        lines = ["round,qubit,target_frequency_ghz,delta_f_mhz"]
        rounds, n = rep.delta_f_mhz.shape
        for r in range(rounds):
            for q in range(n):
                lines.append(
                    f"{r},{q},{rep.targets_ghz[r, q]},{rep.delta_f_mhz[r, q]}"
                )
        out.write_text("\n".join(lines) + "\n")
        print(f"wrote {out}")
    return 0


def _cmd_experiment(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        doc = cfg.config_dict()
        if doc["scenario"] != args.scenario:
            raise ConfigInvalid(
                f"config is for scenario {doc['scenario']!r}, not {args.scenario!r}"
            )
    else:
        doc = {"scenario": args.scenario}
        if args.target:
            doc["target"] = args.target
    # CLI flags override the file.
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.reps is not None:
        doc["repetitions"] = args.reps
    if args.out is not None:
        doc["out"] = args.out
    if args.workers is not None:
        doc["workers"] = args.workers
    cfg = config_from_dict(doc)
    manifest = run_scenario(cfg)
    print(f"run complete: {cfg.out} ({len(manifest['points'])} sweep points)")
    table, _ = report(cfg.out)
    print(table)
    return 0


def _cmd_report(args) -> int:
    table, status = report(args.run_dir)
    print(table)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fluxcal",
        description="Simulate and calibrate flux crosstalk in transmon arrays.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_dev = sub.add_parser("device", help="device file operations")
    dev_sub = p_dev.add_subparsers(dest="device_command", required=True)
    p_gen = dev_sub.add_parser("generate", help="generate a simulated device")
    p_gen.add_argument("--n", type=int, default=16, help="qubit count (perfect square)")
    p_gen.add_argument("--seed", type=int, default=1)
    p_gen.add_argument("--sigma-meas", type=float, default=0.5, help="MHz")
    p_gen.add_argument("--out", type=str, default=None)
    p_gen.set_defaults(func=_cmd_device_generate)

    p_char = sub.add_parser(
        "characterize", help="fit every qubit's spectrum from a voltage sweep"
    )
    p_char.add_argument("--device", required=True)
    p_char.add_argument("--points", type=int, default=15)
    p_char.add_argument("--seed", type=int, default=1)
    p_char.add_argument("--out", type=str, default=None)
    p_char.set_defaults(func=_cmd_characterize)

    p_cal = sub.add_parser("calibrate", help="learn the crosstalk matrix")
    p_cal.add_argument("--device", required=True)
    p_cal.add_argument("--m", type=int, default=100, help="training set size")
    p_cal.add_argument("--seed", type=int, default=1)
    p_cal.add_argument("--out", type=str, default=None)
    p_cal.set_defaults(func=_cmd_calibrate)

    p_val = sub.add_parser("validate", help="score a calibration on fresh targets")
    p_val.add_argument("--device", required=True)
    p_val.add_argument("--result", required=True)
    p_val.add_argument("--targets", type=int, default=10, help="rounds per qubit")
    p_val.add_argument("--seed", type=int, default=1)
    p_val.add_argument("--out", type=str, default=None)
    p_val.set_defaults(func=_cmd_validate)

    p_exp = sub.add_parser("experiment", help="run a scenario sweep")
    p_exp.add_argument("scenario", choices=SCENARIO_NAMES)
    p_exp.add_argument("--config", type=str, default=None, help="JSON config path")
    p_exp.add_argument("--seed", type=int, default=None)
    p_exp.add_argument("--reps", type=int, default=None)
    p_exp.add_argument("--out", type=str, default=None)
    p_exp.add_argument("--workers", type=int, default=None)
    p_exp.add_argument(
        "--target",
        type=str,
        default=None,
        help="belief parameter for param-error/scalar-error scenarios",
    )
    p_exp.set_defaults(func=_cmd_experiment)

    p_rep = sub.add_parser("report", help="summarize a completed run directory")
    p_rep.add_argument("run_dir")
    p_rep.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigInvalid, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
