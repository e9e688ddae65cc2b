"""Command-line front end.

Every step of the workflow is a subcommand that reads and writes files, so
the expensive simulation step can be resumed without retraining::

    paramid sample --space space.json --n 30 --seed 7 --out design.csv
    paramid simulate --design design.csv --model model.json --out bundle/
    paramid sensitivity --bundle bundle/ --out sens/
    paramid train --bundle bundle/ --stage stage.json --seed 1 --out nets/fc/
    paramid identify --plan plan.json --networks nets/ --curve test.csv --out estimates.json

Exit status is 0 on success, 3 for configuration errors, 4 for data errors
and 5 for failed computations. On failure a one-line diagnostic goes to
stderr and a JSON error record is written (``--error-file``).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import load_space, read_curve_csv
from .doe import (
    OBJECTIVES,
    AnnealConfig,
    anneal_config_dict,
    decorrelate,
    design_objective,
    lhs_sample,
    read_design_csv,
    write_design_csv,
)
from .errors import ComputeError, ConfigError, DataError, InsufficientDataError, ParamIdError
from .models import DEFAULT_WORKERS, load_model, run_batch
from .pipeline import (
    PREDICTED,
    IdentificationPlan,
    StageSpec,
    _Runner,
    build_dataset,
    common_strain_grid,
    identify,
    load_trained,
    run_plan,
    train_stage,
    validate_stage,
)
from .stats import load_bundle, peak_sensitivity, save_bundle, sensitivity_evolution, write_peak_table

EXIT_CONFIG, EXIT_DATA, EXIT_COMPUTE, EXIT_INTERNAL = 3, 4, 5, 1

log = logging.getLogger("paramid")


def _exit_code(exc: BaseException) -> tuple[int, str]:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG, "config"
    if isinstance(exc, DataError):
        return EXIT_DATA, "data"
    if isinstance(exc, ComputeError):
        return EXIT_COMPUTE, "compute"
    return EXIT_INTERNAL, "internal"


def _read_json(path, what: str):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc}") from exc


def _objective_or_none(design) -> float | None:
    try:
        return design_objective(design)
    except ParamIdError:
        return None


def _fmt(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.4f}"


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_sample(args) -> int:
    space = load_space(args.space)
    design = lhs_sample(space, args.n, args.seed, jitter=args.jitter)
    before = _objective_or_none(design)
    meta = {"jitter": args.jitter, "anneal": None}
    if not args.no_anneal:
        cfg = AnnealConfig(args.temperature, args.cooling, args.sweeps, args.objective)
        design = decorrelate(design, cfg, seed=args.seed)
        meta["anneal"] = anneal_config_dict(cfg)
    after = _objective_or_none(design)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_design_csv(design, out, meta)
    print(f"wrote {design.n}x{design.d} design to {out}")
    print(f"max |off-diagonal correlation|: before {_fmt(before)}  after {_fmt(after)}")
    return 0


def _parse_fixed(items) -> dict[str, float]:
    fixed = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--fixed expects name=value, got {item!r}")
        try:
            fixed[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"--fixed {name}: {value!r} is not a number") from None
    return fixed


def cmd_simulate(args) -> int:
    model = load_model(args.model)
    design = read_design_csv(args.design)
    bundle = run_batch(model, design, _parse_fixed(args.fixed), args.workers)
    save_bundle(bundle, args.out, model=model.to_dict())
    print(f"simulated {design.n} rows: {bundle.n_valid} valid, {len(bundle.failures)} failed -> {args.out}")
    for row, failure in sorted(bundle.failures.items()):
        print(f"  row {row}: {failure['kind']}: {failure['message']}")
    return 0


def _grid_from_args(args, bundle) -> np.ndarray:
    if args.grid:
        try:
            start, stop, count = args.grid.split(":")
            return np.linspace(float(start), float(stop), int(count))
        except ValueError:
            raise ConfigError(f"--grid expects start:stop:count, got {args.grid!r}") from None
    return common_strain_grid(bundle, args.points)


def cmd_sensitivity(args) -> int:
    bundle = load_bundle(args.bundle)
    if bundle.n_valid < 2:
        raise InsufficientDataError(f"{args.bundle}: {bundle.n_valid} valid curves, at least 2 needed")
    grid = _grid_from_args(args, bundle)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sensitivity_evolution(bundle, grid).write_csv(out / "sensitivity.csv")
    table = peak_sensitivity(bundle)
    write_peak_table(table, out / "peaks.csv")
    print(f"sensitivity over {grid.size} strains from {bundle.n_valid} valid curves -> {out}")
    for row in table:
        print(f"  {row.parameter:<10} r(peak strain) {row.r_peak_strain:+.3f}  r(peak stress) {row.r_peak_stress:+.3f}")
    return 0


def cmd_train(args) -> int:
    bundle = load_bundle(args.bundle)
    stage_dict = dict(_read_json(args.stage, "stage file"))
    stage_dict["seed"] = args.seed
    if args.budget is not None:
        stage_dict["budget"] = args.budget
    stage = StageSpec.from_dict(stage_dict)
    space = load_space(args.space) if args.space else bundle.design.space
    if stage.target not in space:
        raise ConfigError(f"target {stage.target} is not a parameter of {args.space or args.bundle}")
    data = build_dataset(bundle, stage, space)
    trained = train_stage(data, stage)
    report = validate_stage(trained, data, (space[stage.target].lower, space[stage.target].upper))
    out = Path(args.out)
    trained.save(out)
    (out / "validation.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    report.write_csv(out / "validation.csv")
    print(f"trained {stage.name} ({stage.layout.layout}) on {len(data.train_rows)} patterns: "
          f"train error {trained.train_error:.3g}, test error {trained.test_error:.3g}")
    print("  " + report.summary())
    return 0


def _measured_curves(items) -> dict:
    curves = {}
    for item in items:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = "default", item
        curves[name] = read_curve_csv(path)
    return curves


def cmd_identify(args) -> int:
    plan = IdentificationPlan.from_dict(_read_json(args.plan, "plan"))
    networks = Path(args.networks)
    trained = {}
    for stage in plan.stages:
        path = networks / stage.name / "network.json"
        if path.exists():
            trained[stage.name] = load_trained(path)
    trainer = None
    if args.train_missing:
        runner = _Runner(plan, networks, args.workers, None, None, None)

        def trainer(stage, predictions):
            fixed = {k: float(v) for k, v in stage.frozen.items() if v != PREDICTED}
            fixed.update({k: predictions[k] for k in stage.predicted_freezes})
            return runner.train(stage, fixed, networks / "per-measurement" / stage.name)[0]

    estimates = identify(plan, trained, _measured_curves(args.curve), trainer)
    payload = {p: {"value": e.value, "in_bounds": e.in_bounds, "stage": e.stage} for p, e in estimates.items()}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    for p, e in estimates.items():
        flag = "" if e.in_bounds else "  (outside bounds)"
        print(f"{p} = {e.value!r}{flag}")
    return 0


def _seeded_plan(data: dict, seed: int) -> dict:
    """Fill seeds the plan leaves open from the run seed."""
    data = json.loads(json.dumps(data))
    for i, stage in enumerate(data.get("stages", [])):
        stage.setdefault("seed", seed + i)
        stage.setdefault("design_seed", seed + 100 + i)
    if data.get("truth"):
        data["truth"].setdefault("seed", seed + 1000)
    return data


def cmd_run(args) -> int:
    plan = IdentificationPlan.from_dict(_seeded_plan(_read_json(args.plan, "plan"), args.seed))
    measured = {}
    for item in args.curve or []:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        measured[name] = read_curve_csv(path)
    result = run_plan(plan, args.out, measured, workers=args.workers)
    for name, report in result.reports.items():
        print(f"stage {name}: {report.summary()}")
    for report in result.truth_reports.values():
        print(f"identified {report.summary()}")
    for key, message in result.errors.items():
        print(f"error in {key}: {message}", file=sys.stderr)
    print(f"{len(result.manifest['files'])} artifacts listed in {Path(args.out) / 'manifest.json'}")
    return EXIT_COMPUTE if result.errors else 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="paramid", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--error-file", default="paramid-error.json",
                        help="where to write the JSON error record on failure (default: %(default)s)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="Latin Hypercube design with annealing decorrelation")
    p.add_argument("--space", required=True, help="parameter space JSON")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="design CSV to write")
    p.add_argument("--jitter", action="store_true", help="random position inside each stratum")
    p.add_argument("--no-anneal", action="store_true", help="skip decorrelation")
    p.add_argument("--sweeps", type=int, default=AnnealConfig.sweeps)
    p.add_argument("--temperature", type=float, default=AnnealConfig.initial_temperature)
    p.add_argument("--cooling", type=float, default=AnnealConfig.cooling_factor)
    p.add_argument("--objective", choices=OBJECTIVES, default=AnnealConfig.objective)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("simulate", help="run the forward model on every design row")
    p.add_argument("--design", required=True)
    p.add_argument("--model", required=True, help="model spec JSON")
    p.add_argument("--out", required=True, help="bundle directory")
    p.add_argument("--fixed", action="append", metavar="NAME=VALUE",
                   help="value of a parameter that is not a design column (repeatable)")
    p.add_argument("--workers", type=int, default=DEFAULT_WORKERS)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sensitivity", help="Pearson sensitivity of a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True, help="directory for sensitivity.csv and peaks.csv")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--points", type=int, default=25, help="evenly spaced strains over the common range")
    g.add_argument("--grid", help="explicit grid start:stop:count")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("train", help="train and validate one stage network")
    p.add_argument("--bundle", required=True)
    p.add_argument("--stage", required=True, help="stage JSON")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--budget", type=int, help="objective calls (overrides the stage file)")
    p.add_argument("--space", help="parameter space JSON giving the target bounds")
    p.add_argument("--out", required=True, help="directory for network.json and history.csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("identify", help="apply trained stages to measured curves")
    p.add_argument("--plan", required=True)
    p.add_argument("--networks", required=True, help="directory holding <stage>/network.json")
    p.add_argument("--curve", action="append", required=True, metavar="[NAME=]CSV",
                   help="measured curve (repeatable; NAME selects the curve a feature reads)")
    p.add_argument("--out", required=True, help="estimates JSON")
    p.add_argument("--train-missing", action="store_true",
                   help="simulate and train stages that freeze predicted values")
    p.add_argument("--workers", type=int, default=DEFAULT_WORKERS)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("run", help="execute a whole plan into a run directory")
    p.add_argument("--plan", required=True)
    p.add_argument("--seed", type=int, required=True, help="fills stage seeds the plan leaves open")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--curve", action="append", metavar="[NAME=]CSV", help="measured curve to identify")
    p.add_argument("--workers", type=int, default=DEFAULT_WORKERS)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be at least 1")
    try:
        return args.func(args)
    except ParamIdError as exc:
        code, category = _exit_code(exc)
        message = str(exc).replace("\n", " ")
        print(f"paramid {args.command}: {category} error: {message}", file=sys.stderr)
        record = {
            "command": args.command,
            "category": category,
            "error": type(exc).__name__,
            "message": message,
            "exit_code": code,
        }
        try:
            Path(args.error_file).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
        except OSError:
            pass
        return code


if __name__ == "__main__":
    sys.exit(main())
