"""Forward models: an analytic surrogate and an adapter for external solvers.

A model is any callable mapping a parameter point (``dict`` of name to
value) to a :class:`~paramid.core.ResponseCurve`. :func:`run_batch`
evaluates one over every row of a design and collects a
:class:`~paramid.stats.CurveBundle`, masking rows that fail.
"""
from __future__ import annotations

import json
import os
import shlex
import shutil
import string
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Parameter, ParameterSpace, ResponseCurve, read_curve_csv
from .doe import DesignMatrix
from .errors import (
    ConfigError,
    DataError,
    EmptyBundleError,
    InvalidShapeError,
    ModelExitError,
    ModelParseError,
    ModelRunError,
    ModelTimeoutError,
    ParamIdError,
)
from .stats import CurveBundle

SCRATCH_ENV = "PARAMID_SCRATCH"
DEFAULT_WORKERS = 7
SURROGATE_PARAMS = ("f_c", "eps_p", "m")


def default_surrogate_space() -> ParameterSpace:
    return ParameterSpace((
        Parameter("f_c", 20.0, 60.0, "MPa"),
        Parameter("eps_p", 0.001, 0.004),
        Parameter("m", 2.0, 6.0),
    ))


def strain_grid(stop: float, step: float) -> np.ndarray:
    """``0, step, 2*step, ...`` up to and including ``stop``.

    Points are formed as ``k * step`` rather than by accumulation, so a
    strain such as 0.002 on a 1e-5 grid is hit exactly.
    """
    if step <= 0 or stop <= 0:
        raise ConfigError("grid step and stop must be positive")
    count = int(round(stop / step))
    return np.arange(count + 1) * step


@dataclass(frozen=True, eq=False)
class SurrogateSpec:
    """Popovics-type softening curve on a fixed strain grid."""

    params: ParameterSpace = field(default_factory=default_surrogate_space)
    strain_grid: np.ndarray = field(default_factory=lambda: strain_grid(0.012, 1e-5))
    family: str = "popovics"

    def __post_init__(self):
        if self.family != "popovics":
            raise ConfigError(f"unknown surrogate family {self.family!r}")
        missing = [p for p in SURROGATE_PARAMS if p not in self.params]
        if missing:
            raise ConfigError(f"surrogate space lacks parameters {missing}")
        grid = np.array(self.strain_grid, dtype=float)
        if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ConfigError("strain grid must be strictly increasing with at least two points")
        if grid[0] < 0:
            raise ConfigError("strain grid must start at a non-negative strain")
        grid.setflags(write=False)
        object.__setattr__(self, "strain_grid", grid)

    def to_dict(self) -> dict:
        return {
            "kind": "surrogate",
            "family": self.family,
            "space": self.params.to_dict(),
            "strain_grid": self.strain_grid.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SurrogateSpec":
        space = ParameterSpace.from_dict(data["space"]) if "space" in data else default_surrogate_space()
        if "strain_grid" in data:
            grid = np.asarray(data["strain_grid"], dtype=float)
        else:
            g = data.get("grid", {})
            grid = strain_grid(g.get("stop", 0.012), g.get("step", 1e-5))
        return cls(space, grid, data.get("family", "popovics"))


def popovics_stress(strain, f_c: float, eps_p: float, m: float):
    """``f_c * r * m / (m - 1 + r**m)`` with ``r = strain / eps_p``.

    Evaluated as ``f_c * r / (1 + (r**m - 1) / m)``, which is the same
    function but returns ``f_c`` bit-exactly at ``r = 1``.
    """
    if not m > 1.0:
        raise InvalidShapeError(f"shape exponent must exceed 1, got {m}")
    if not (f_c > 0 and eps_p > 0):
        raise InvalidShapeError("f_c and eps_p must be positive")
    r = np.asarray(strain, dtype=float) / eps_p
    return f_c * r / (1.0 + (r**m - 1.0) / m)


def surrogate_curve(spec: SurrogateSpec, point: Mapping[str, float]) -> ResponseCurve:
    """Evaluate the surrogate at ``point`` on the spec's grid.

    Bounds of the parameter space are not enforced here, so the surrogate
    can also produce "measured" curves slightly outside the training box.
    """
    try:
        f_c, eps_p, m = (float(point[p]) for p in SURROGATE_PARAMS)
    except KeyError as exc:
        raise ConfigError(f"surrogate point lacks parameter {exc.args[0]!r}") from None
    stress = popovics_stress(spec.strain_grid, f_c, eps_p, m)
    return ResponseCurve(spec.strain_grid, stress, {"model": "popovics"})


def initial_modulus(f_c: float, eps_p: float, m: float) -> float:
    return f_c / eps_p * m / (m - 1.0)


class SurrogateModel:
    """Callable wrapper around :func:`surrogate_curve`; safe to share between threads."""

    def __init__(self, spec: SurrogateSpec | None = None):
        self.spec = spec or SurrogateSpec()

    def __call__(self, point: Mapping[str, float]) -> ResponseCurve:
        return surrogate_curve(self.spec, point)

    @property
    def space(self) -> ParameterSpace:
        return self.spec.params

    def to_dict(self) -> dict:
        return self.spec.to_dict()


# --------------------------------------------------------------------------
# external solvers
# --------------------------------------------------------------------------


_RESERVED = ("param_file", "curve_file", "workdir")


def _template_fields(template: str) -> list[str]:
    return [f for _, f, _, _ in string.Formatter().parse(template) if f is not None]


@dataclass(frozen=True)
class ExternalModelSpec:
    """How to drive an external simulator through files.

    ``command`` is an argument list (or a shell-style string, split with
    :mod:`shlex`) whose items may contain ``{param_file}``, ``{curve_file}``,
    ``{workdir}`` and ``{<parameter name>}`` placeholders. The simulator
    receives the parameter file as CSV ``name,value`` and must leave the
    curve file as CSV ``strain,stress``. Both file names are templates
    relative to the per-run working directory. ``workdir`` is the scratch
    root; when ``None`` the ``PARAMID_SCRATCH`` environment variable or the
    system temporary directory is used.
    """

    command: tuple[str, ...]
    param_file: str = "params.csv"
    curve_file: str = "curve.csv"
    timeout: float = 600.0
    workdir: str | None = None
    keep_workdirs: bool = False

    def __post_init__(self):
        cmd = self.command
        if isinstance(cmd, str):
            cmd = shlex.split(cmd)
        cmd = tuple(str(c) for c in cmd)
        if not cmd:
            raise ConfigError("external command is empty")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        for name in (self.param_file, self.curve_file):
            if Path(name).is_absolute() or ".." in Path(name).parts:
                raise ConfigError(f"file template {name!r} must stay inside the run directory")
        object.__setattr__(self, "command", cmd)

    def parameter_references(self) -> list[str]:
        refs = []
        for item in (*self.command, self.param_file, self.curve_file):
            refs.extend(f for f in _template_fields(item) if f not in _RESERVED)
        return refs

    def check_parameters(self, names: Sequence[str]) -> None:
        """Each placeholder must name a known parameter and appear at most once."""
        refs = self.parameter_references()
        unknown = sorted(set(refs) - set(names))
        if unknown:
            raise ConfigError(f"command template references unknown parameters {unknown}")
        repeated = sorted({r for r in refs if refs.count(r) > 1})
        if repeated:
            raise ConfigError(f"command template references {repeated} more than once")

    def to_dict(self) -> dict:
        return {
            "kind": "external",
            "command": list(self.command),
            "param_file": self.param_file,
            "curve_file": self.curve_file,
            "timeout": self.timeout,
            "workdir": self.workdir,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExternalModelSpec":
        return cls(
            data["command"],
            data.get("param_file", "params.csv"),
            data.get("curve_file", "curve.csv"),
            float(data.get("timeout", 600.0)),
            data.get("workdir"),
            bool(data.get("keep_workdirs", False)),
        )


def write_parameter_csv(point: Mapping[str, float], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("name,value\n")
        for name, value in point.items():
            fh.write(f"{name},{float(value)!r}\n")


def read_parameter_csv(path) -> dict[str, float]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "name,value":
        raise DataError(f"{path}: expected header 'name,value'")
    out = {}
    for line in lines[1:]:
        if line.strip():
            name, value = line.split(",")
            out[name.strip()] = float(value)
    return out


def run_external(spec: ExternalModelSpec, point: Mapping[str, float]) -> ResponseCurve:
    """Run the simulator once in a fresh directory.

    Raises :class:`~paramid.errors.ModelTimeoutError`,
    :class:`~paramid.errors.ModelExitError` or
    :class:`~paramid.errors.ModelParseError`.
    """
    spec.check_parameters(list(point))
    root = spec.workdir or os.environ.get(SCRATCH_ENV) or None
    if root:
        Path(root).mkdir(parents=True, exist_ok=True)
    run_dir = Path(tempfile.mkdtemp(prefix="paramid-run-", dir=root))
    try:
        values = {k: repr(float(v)) for k, v in point.items()}
        param_file = run_dir / spec.param_file.format(**values)
        curve_file = run_dir / spec.curve_file.format(**values)
        write_parameter_csv(point, param_file)
        fmt = dict(values, param_file=str(param_file), curve_file=str(curve_file), workdir=str(run_dir))
        argv = [item.format(**fmt) for item in spec.command]
        try:
            proc = subprocess.run(
                argv, cwd=run_dir, capture_output=True, text=True, timeout=spec.timeout, check=False
            )
        except subprocess.TimeoutExpired:
            raise ModelTimeoutError(f"{argv[0]} exceeded {spec.timeout} s") from None
        except OSError as exc:
            raise ModelExitError(f"cannot start {argv[0]}: {exc}") from None
        if proc.returncode != 0:
            tail = proc.stderr.strip().splitlines()[-1:] or [""]
            raise ModelExitError(f"{argv[0]} exited with {proc.returncode}: {tail[0]}", proc.returncode)
        try:
            curve = read_curve_csv(curve_file)
        except DataError as exc:
            raise ModelParseError(str(exc)) from None
        return ResponseCurve(curve.strain, curve.stress, {"model": "external"})
    finally:
        if not spec.keep_workdirs:
            shutil.rmtree(run_dir, ignore_errors=True)


class ExternalModel:
    def __init__(self, spec: ExternalModelSpec):
        self.spec = spec

    def __call__(self, point: Mapping[str, float]) -> ResponseCurve:
        return run_external(self.spec, point)

    def to_dict(self) -> dict:
        return self.spec.to_dict()


def model_from_dict(data: Mapping):
    kind = data.get("kind", "surrogate")
    if kind == "surrogate":
        return SurrogateModel(SurrogateSpec.from_dict(data))
    if kind == "external":
        return ExternalModel(ExternalModelSpec.from_dict(data))
    raise ConfigError(f"unknown model kind {kind!r}")


def load_model(path):
    try:
        return model_from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot load model spec {path}: {exc}") from exc


# --------------------------------------------------------------------------
# batches
# --------------------------------------------------------------------------


def _failure_record(exc: Exception) -> dict:
    kind = exc.kind if isinstance(exc, ModelRunError) else type(exc).__name__
    return {"kind": kind, "message": str(exc)}


def run_batch(
    model: Callable[[Mapping[str, float]], ResponseCurve],
    design: DesignMatrix,
    fixed: Mapping[str, float] | None = None,
    workers: int = DEFAULT_WORKERS,
) -> CurveBundle:
    """Evaluate ``model`` on every design row, ``workers`` rows at a time.

    ``fixed`` supplies values for parameters that are not design columns.
    A row whose evaluation raises a package error is masked out and its
    failure recorded; the batch carries on. Curves are returned in row order
    and tagged with their row index.
    """
    if workers < 1:
        raise ConfigError("workers must be at least 1")
    fixed = dict(fixed or {})
    overlap = set(fixed) & set(design.space.names)
    if overlap:
        raise ConfigError(f"parameters {sorted(overlap)} are both fixed and sampled")

    def one(i: int):
        point = dict(fixed)
        point.update(design.point(i))
        try:
            c = model(point)
        except ParamIdError as exc:
            return None, _failure_record(exc)
        return ResponseCurve(c.strain, c.stress, {**c.meta, "row": i}), None

    if workers == 1 or design.n == 1:
        results = [one(i) for i in range(design.n)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(design.n)))
    curves = [c for c, _ in results]
    failures = {i: f for i, (_, f) in enumerate(results) if f is not None}
    if len(failures) == design.n:
        first = next(iter(failures.values()))
        raise EmptyBundleError(f"all {design.n} simulations failed, first: {first['message']}")
    return CurveBundle(design, curves, failures=failures, fixed=fixed)
