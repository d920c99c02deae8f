"""Command-line entry point: ``olslab <subcommand> [flags]``.

Every run writes its outputs plus ``manifest.json`` into the output directory
(``--out``, else ``$OLSLAB_OUTPUT_DIR``, else ``./olslab_out``).  Exit status
is 0 on success, 2 on invalid input, 1 on internal failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .errors import CapacityError, ValidationError
from .estimator import error_identity_check, ols
from .experiments import (
    ExperimentConfig,
    calibrate_constant,
    decay_experiment,
    pac_experiment,
    proof_diagnostics,
)
from .gramians import evaluate_conditions, gramian_sum
from .io import load_matrix, read_json, write_csv, write_json
from .lti import NoiseFamily, NoiseKind, SystemSpec, Trajectory, simulate
from .spectrum import hw_tail_estimate, isometry_defect

DEFAULT_SEED = 1729
OUTPUT_ENV = "OLSLAB_OUTPUT_DIR"
SUBCOMMANDS = (
    "simulate", "estimate", "bounds", "spectrum-check", "hw-check",
    "pac-experiment", "decay", "calibrate", "diagnostics",
)


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    master_seed: int
    version: str
    argv: list
    outputs: list = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        return cls(**data)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _float_list(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="olslab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./olslab_out)")
    common.add_argument("--seed", type=int, default=None, help=f"master seed (default {DEFAULT_SEED})")

    noise_kinds = [k.value for k in NoiseKind]

    p = sub.add_parser("simulate", parents=[common], help="simulate one trajectory")
    p.add_argument("--matrix", required=True, help="dynamics matrix: inline JSON rows (d <= 4) or a JSON file")
    p.add_argument("--noise", default="gaussian", choices=noise_kinds)
    p.add_argument("--t", type=_positive_int, required=True, help="number of transitions")

    p = sub.add_parser("estimate", parents=[common], help="OLS estimate from a trajectory file")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--true-A", dest="true_A", help="true dynamics, enables the error fields")

    p = sub.add_parser("bounds", parents=[common], help="evaluate the sample-size condition")
    p.add_argument("--matrix", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--constant", type=float, default=1.0)
    p.add_argument("--constant-mode", choices=("c", "cprime"), default="c")
    p.add_argument("--noise", default="gaussian", choices=noise_kinds)
    p.add_argument("--K", type=float, default=None, help="sub-gaussian norm (default: from --noise)")
    p.add_argument("--t", type=_positive_int, default=None, help="horizon for the rate bound")
    p.add_argument("--t-max", type=_positive_int, default=10_000_000)
    p.add_argument("--grid", type=_positive_int, default=4096, help="symbol grid points")

    p = sub.add_parser("spectrum-check", parents=[common], help="isometry defect of a trajectory")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--epsilon", type=float, default=None)

    p = sub.add_parser("hw-check", parents=[common], help="quadratic-form tail frequencies")
    p.add_argument("--matrix", required=True, help="matrix B (m x d)")
    p.add_argument("--noise", default="gaussian", choices=noise_kinds)
    p.add_argument("--eps", type=_float_list, required=True, help="comma-separated levels")
    p.add_argument("--trials", type=_positive_int, default=100_000)
    p.add_argument("--constant", type=float, default=1.0)

    for name, help_text in (
        ("pac-experiment", "failure frequency at each horizon of the config"),
        ("decay", "error decay across the config's horizons"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--config", required=True, help="experiment config JSON file")
        if name == "pac-experiment":
            p.add_argument("--t", type=_positive_int, default=None, help="override the config horizons")

    p = sub.add_parser("calibrate", parents=[common], help="calibrate the sample-size constant")
    p.add_argument("--config", required=True, help="JSON with systems, epsilon, delta")

    p = sub.add_parser("diagnostics", parents=[common], help="two-event argument on one path")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--noise", default="gaussian", choices=noise_kinds)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--constant", type=float, default=1.0)
    p.add_argument("--K", type=float, default=None)
    return parser


def _output_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUTPUT_ENV) or "olslab_out")


def _load_trajectory(path) -> Trajectory:
    data = read_json(path)
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected a trajectory object")
    return Trajectory.from_dict(data)


def _experiment_config(path, seed: Optional[int]) -> ExperimentConfig:
    data = read_json(path)
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected a JSON object")
    data = dict(data)
    if "system" not in data:
        if "matrix" not in data:
            raise ValidationError(f"{path}: config needs 'matrix' or 'system'")
        data["system"] = {"A": load_matrix(data.pop("matrix")).tolist(), "noise": data.pop("noise", "gaussian")}
    if seed is not None:
        data["master_seed"] = seed
    data.setdefault("master_seed", DEFAULT_SEED)
    missing = [k for k in ("t_grid", "epsilon", "delta", "n_trials") if k not in data]
    if missing:
        raise ValidationError(f"{path}: config is missing {', '.join(missing)}")
    return ExperimentConfig.from_dict(data)


def _cmd_simulate(args, out: Path, seed: int):
    spec = SystemSpec(load_matrix(args.matrix), NoiseFamily(args.noise))
    traj = simulate(spec, args.t, seed)
    return {"system": spec.to_dict(), "t": args.t}, [write_json(out / "trajectory.json", traj.to_dict())]


def _cmd_estimate(args, out: Path, seed: int):
    traj = _load_trajectory(args.trajectory)
    A = load_matrix(args.true_A) if args.true_A else None
    est = ols(traj, A)
    payload = est.to_dict()
    if A is not None:
        if A.shape[0] != traj.d:
            raise ValidationError(f"--true-A is {A.shape[0]}x{A.shape[0]} but the trajectory has dimension {traj.d}")
        payload["error_identity_residual"] = (
            error_identity_check(traj, A) if traj.noise_record is not None else None
        )
    config = {"trajectory": str(args.trajectory), "true_A": None if A is None else A.tolist()}
    return config, [write_json(out / "estimate.json", payload)]


def _cmd_bounds(args, out: Path, seed: int):
    A = load_matrix(args.matrix)
    report = evaluate_conditions(
        A, args.epsilon, args.delta, args.constant, args.K, args.t_max,
        noise=NoiseFamily(args.noise), t=args.t, constant_mode=args.constant_mode, grid_points=args.grid,
    )
    config = {k: getattr(args, k) for k in ("epsilon", "delta", "constant", "constant_mode", "noise", "K",
                                            "t", "t_max", "grid")}
    config["matrix"] = A.tolist()
    return config, [write_json(out / "bounds.json", report.to_dict())]


def _cmd_spectrum_check(args, out: Path, seed: int):
    traj = _load_trajectory(args.trajectory)
    A = load_matrix(args.matrix)
    if A.shape[0] != traj.d:
        raise ValidationError("matrix and trajectory dimensions differ")
    g = gramian_sum(A, traj.t)
    report = isometry_defect(traj.X, g.whitener, args.epsilon)
    config = {"trajectory": str(args.trajectory), "matrix": A.tolist(), "epsilon": args.epsilon}
    return config, [write_json(out / "isometry.json", report.to_dict())]


def _cmd_hw_check(args, out: Path, seed: int):
    B = load_matrix(args.matrix, "B", square=False)
    res = hw_tail_estimate(B, NoiseFamily(args.noise), args.eps, args.trials, seed, args.constant)
    config = {"matrix": B.tolist(), "noise": args.noise, "eps": args.eps, "trials": args.trials,
              "constant": args.constant}
    path = write_csv(out / "hw.csv", res.rows(), ["eps", "empirical", "std_error", "bound"])
    return config, [path]


def _cmd_pac(args, out: Path, seed: Optional[int]):
    cfg = _experiment_config(args.config, seed)
    horizons = [args.t] if args.t else list(cfg.t_grid)
    paths = []
    for t in horizons:
        batch = pac_experiment(cfg, t)
        paths.append(write_json(out / f"pac_t{t}.json", batch.to_dict()))
        paths.append(write_csv(out / f"pac_t{t}.csv", batch.csv_rows(),
                               ["trial", "seed", "error", "e2_indicator", "selfnorm_value"]))
    return {**cfg.to_dict(), "horizons": horizons}, paths


def _cmd_decay(args, out: Path, seed: Optional[int]):
    cfg = _experiment_config(args.config, seed)
    fit = decay_experiment(cfg)
    paths = [
        write_csv(out / "decay.csv", fit.csv_rows(), ["t", "lambda_min", "median", "quantile", "bound_rhs"]),
        write_json(out / "decay.json", fit.to_dict()),
    ]
    return cfg.to_dict(), paths


def _cmd_calibrate(args, out: Path, seed: Optional[int]):
    data = read_json(args.config)
    if not isinstance(data, dict) or "systems" not in data:
        raise ValidationError(f"{args.config}: calibration config needs a 'systems' list")
    noise = NoiseFamily(data.get("noise", "gaussian"))
    specs = [SystemSpec(load_matrix(m), noise) for m in data["systems"]]
    master = seed if seed is not None else int(data.get("master_seed", DEFAULT_SEED))
    for key in ("epsilon", "delta"):
        if key not in data:
            raise ValidationError(f"{args.config}: calibration config is missing {key}")
    n_probe = data.get("n_probe_trials", 20)
    res = calibrate_constant(specs, float(data["epsilon"]), float(data["delta"]), n_probe, master)
    config = {"systems": [s.A.tolist() for s in specs], "noise": noise.kind.value, "epsilon": data["epsilon"],
              "delta": data["delta"], "n_probe_trials": n_probe, "master_seed": master}
    return config, [write_json(out / "calibration.json", res.to_dict())]


def _cmd_diagnostics(args, out: Path, seed: int):
    traj = _load_trajectory(args.trajectory)
    spec = SystemSpec(load_matrix(args.matrix), NoiseFamily(args.noise))
    diag = proof_diagnostics(traj, spec, args.epsilon, args.delta, args.K, args.constant)
    config = {"trajectory": str(args.trajectory), "matrix": spec.A.tolist(), "noise": args.noise,
              "epsilon": args.epsilon, "delta": args.delta, "constant": args.constant, "K": args.K}
    return config, [write_json(out / "diagnostics.json", diag.to_dict())]


HANDLERS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "bounds": _cmd_bounds,
    "spectrum-check": _cmd_spectrum_check,
    "hw-check": _cmd_hw_check,
    "pac-experiment": _cmd_pac,
    "decay": _cmd_decay,
    "calibrate": _cmd_calibrate,
    "diagnostics": _cmd_diagnostics,
}
# these read master_seed from their config unless --seed is given
CONFIG_SEEDED = {"pac-experiment", "decay", "calibrate"}


def run(argv=None) -> tuple[int, Optional[RunManifest]]:
    """Execute one subcommand; returns ``(exit_status, manifest)``."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return (exc.code if isinstance(exc.code, int) else 2), None

    started = time.perf_counter()
    out = _output_dir(args)
    seed = args.seed
    if seed is None and args.command not in CONFIG_SEEDED:
        seed = DEFAULT_SEED
    try:
        config, paths = HANDLERS[args.command](args, out, seed)
    except (ValidationError, CapacityError) as exc:
        print(f"olslab {args.command}: error: {exc}", file=sys.stderr)
        return 2, None
    except Exception as exc:  # noqa: BLE001 - surfaced as exit status 1
        print(f"olslab {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1, None

    master = seed if seed is not None else config.get("master_seed", DEFAULT_SEED)
    replay = [a for a in argv]
    if "--seed" not in replay:
        replay += ["--seed", str(master)]
    manifest = RunManifest(
        subcommand=args.command,
        config=config,
        master_seed=int(master),
        version=__version__,
        argv=_strip_out(replay),
        outputs=[str(p) for p in paths],
        wall_clock_seconds=time.perf_counter() - started,
    )
    write_json(out / "manifest.json", manifest.to_dict())
    return 0, manifest


def _strip_out(argv: list) -> list:
    res, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        if a.startswith("--out="):
            continue
        res.append(a)
    return res


def main(argv=None) -> int:
    status, manifest = run(argv)
    if manifest is not None:
        for p in manifest.outputs:
            print(p)
    return status


if __name__ == "__main__":
    sys.exit(main())
