"""Nested identification: datasets, training, validation and inversion.

A plan is an ordered list of stages. Each stage trains one network that maps
curve features (and, optionally, already identified parameters) to one
target parameter. Parameters that a stage does not vary are frozen, either
at a fixed number or at the value an earlier stage predicted for the
measurement at hand. The latter needs a fresh bundle and a fresh network per
measurement.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq

from . import __version__
from .ann import Network, Topology, population_error, propagate
from .core import (
    CurveFeature,
    NormalizationRule,
    ParameterSpace,
    ResponseCurve,
    denormalize,
    extract_features,
    normalize,
    read_curve_csv,
    write_curve_csv,
)
from .doe import AnnealConfig, DesignMatrix, decorrelate, lhs_sample, write_design_csv
from .errors import (
    ConfigError,
    DataError,
    InsufficientDataError,
    NoIntersectionError,
    ParamIdError,
    PlanError,
)
from .grade import CerafConfig, Domain, GradeConfig, evolve
from .models import DEFAULT_WORKERS, model_from_dict, run_batch
from .stats import (
    CurveBundle,
    load_bundle,
    peak_sensitivity,
    save_bundle,
    sensitivity_evolution,
    write_peak_table,
)

log = logging.getLogger(__name__)

PREDICTED = "predicted"
DEFAULT_BUDGET = 1_000_000
DEFAULT_WEIGHT_BOUND = 15.0
DEFAULT_TOLERANCE = 0.05
STAGE_FORMAT = "paramid.stage/1"


# --------------------------------------------------------------------------
# plan
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StageSpec:
    name: str
    target: str
    layout: Topology
    features: tuple[CurveFeature, ...]
    frozen: Mapping[str, float | str] = field(default_factory=dict)
    train_count: int = 60
    test_count: int = 10
    seed: int = 0
    budget: int = DEFAULT_BUDGET
    weight_bound: float = DEFAULT_WEIGHT_BOUND
    samples: int | None = None
    design_seed: int | None = None
    coupled_with: str | None = None

    def __post_init__(self):
        layout = self.layout if isinstance(self.layout, Topology) else Topology.parse(str(self.layout))
        object.__setattr__(self, "layout", layout)
        feats = tuple(f if isinstance(f, CurveFeature) else CurveFeature.from_dict(f) for f in self.features)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "frozen", dict(self.frozen))
        if not self.name or not str(self.name).replace("-", "_").isidentifier():
            raise PlanError(f"stage name {self.name!r} must be identifier-like")
        if layout.n_inputs != len(feats):
            raise PlanError(f"stage {self.name}: layout {layout.layout} takes {layout.n_inputs} inputs "
                            f"but {len(feats)} features are listed")
        if layout.n_outputs != 1:
            raise PlanError(f"stage {self.name}: networks must have a single output")
        if self.train_count < 1 or self.test_count < 1:
            raise PlanError(f"stage {self.name}: train and test counts must be positive")
        if self.samples is not None and self.samples < self.train_count + self.test_count:
            raise PlanError(f"stage {self.name}: {self.samples} samples cannot hold "
                            f"{self.train_count} + {self.test_count} patterns")
        if self.budget < 1 or self.weight_bound <= 0:
            raise PlanError(f"stage {self.name}: budget and weight_bound must be positive")
        for k, v in self.frozen.items():
            if v != PREDICTED and not isinstance(v, (int, float)):
                raise PlanError(f"stage {self.name}: frozen {k} must be a number or {PREDICTED!r}")
        if self.target in self.frozen:
            raise PlanError(f"stage {self.name}: target {self.target} cannot be frozen")

    @property
    def sample_count(self) -> int:
        return self.samples if self.samples is not None else self.train_count + self.test_count

    @property
    def predicted_freezes(self) -> list[str]:
        return [k for k, v in self.frozen.items() if v == PREDICTED]

    @property
    def known_inputs(self) -> list[str]:
        return [f.argument for f in self.features if f.kind == "known_parameter"]

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "target": self.target,
            "layout": self.layout.layout,
            "features": [f.to_dict() for f in self.features],
            "frozen": dict(self.frozen),
            "train": self.train_count,
            "test": self.test_count,
            "seed": self.seed,
            "budget": self.budget,
            "weight_bound": self.weight_bound,
        }
        if self.layout.gain != 0.5:
            d["gain"] = self.layout.gain
        if self.layout.activation != "sigmoid":
            d["activation"] = self.layout.activation
        for key in ("samples", "design_seed", "coupled_with"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "StageSpec":
        try:
            topo = Topology.parse(d["layout"], gain=d.get("gain", 0.5), activation=d.get("activation", "sigmoid"))
            return cls(
                name=d["name"],
                target=d["target"],
                layout=topo,
                features=tuple(CurveFeature.from_dict(f) for f in d["features"]),
                frozen=d.get("frozen", {}),
                train_count=int(d.get("train", 60)),
                test_count=int(d.get("test", 10)),
                seed=int(d.get("seed", 0)),
                budget=int(d.get("budget", DEFAULT_BUDGET)),
                weight_bound=float(d.get("weight_bound", DEFAULT_WEIGHT_BOUND)),
                samples=d.get("samples"),
                design_seed=d.get("design_seed"),
                coupled_with=d.get("coupled_with"),
            )
        except (KeyError, TypeError) as exc:
            raise PlanError(f"malformed stage {d.get('name', '?')!r}: {exc}") from exc


@dataclass(frozen=True)
class IdentificationPlan:
    """Ordered stages bound to one forward model and one parameter space."""

    stages: tuple[StageSpec, ...]
    model: Mapping = field(default_factory=lambda: {"kind": "surrogate"})
    space: ParameterSpace | None = None
    name: str = "plan"
    anneal: AnnealConfig | None = field(default_factory=AnnealConfig)
    sensitivity_points: int = 25
    truth: Mapping | None = None

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "model", dict(self.model))
        if self.space is None:
            model = model_from_dict(self.model)
            if not hasattr(model, "space"):
                raise PlanError("plans for external models must list their parameter space")
            object.__setattr__(self, "space", model.space)
        self.validate()

    def stage(self, name: str) -> StageSpec:
        for s in self.stages:
            if s.name == name:
                return s
        raise PlanError(f"no stage named {name!r}")

    def validate(self) -> None:
        """Check names, bounds and that every reference resolves to an earlier stage."""
        names = [s.name for s in self.stages]
        if len(set(names)) != len(names):
            raise PlanError(f"duplicate stage names in {names}")
        targets = [s.target for s in self.stages]
        if len(set(targets)) != len(targets):
            raise PlanError(f"a parameter is targeted by more than one stage: {targets}")
        produced: set[str] = set()
        for pos, s in enumerate(self.stages):
            for p in (s.target, *s.frozen, *s.known_inputs):
                if p not in self.space:
                    raise PlanError(f"stage {s.name}: unknown parameter {p!r}")
            partner = None
            if s.coupled_with is not None:
                partner = self.stage(s.coupled_with)
                if partner.coupled_with != s.name:
                    raise PlanError(f"stages {s.name} and {partner.name} must name each other as partners")
                if partner.target not in s.known_inputs or s.target not in partner.known_inputs:
                    raise PlanError(f"coupled stages {s.name}/{partner.name} must take each other's target as input")
                if s.predicted_freezes or partner.predicted_freezes:
                    raise PlanError("coupled stages cannot freeze predicted values")
            for p in s.predicted_freezes:
                if p not in produced:
                    raise PlanError(f"stage {s.name} freezes {p} at its prediction, "
                                    f"but no earlier stage predicts {p}")
            for p in s.known_inputs:
                ok = p in produced or isinstance(s.frozen.get(p), (int, float))
                ok = ok or (partner is not None and p == partner.target)
                if not ok:
                    raise PlanError(f"stage {s.name} uses {p} as an input, but {p} is neither "
                                    f"predicted by an earlier stage nor frozen")
            produced.add(s.target)
            if partner is not None and self.stages.index(partner) > pos:
                produced.add(partner.target)

    def config_hash(self) -> str:
        return hashlib.sha256(_canonical(self.to_dict()).encode()).hexdigest()

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "model": self.model,
            "space": self.space.to_dict(),
            "anneal": None if self.anneal is None else {
                "initial_temperature": self.anneal.initial_temperature,
                "cooling_factor": self.anneal.cooling_factor,
                "sweeps": self.anneal.sweeps,
                "objective": self.anneal.objective,
            },
            "sensitivity_points": self.sensitivity_points,
            "stages": [s.to_dict() for s in self.stages],
        }
        if self.truth is not None:
            d["truth"] = dict(self.truth)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "IdentificationPlan":
        try:
            anneal = d.get("anneal", {})
            return cls(
                stages=tuple(StageSpec.from_dict(s) for s in d.get("stages", [])),
                model=d.get("model", {"kind": "surrogate"}),
                space=ParameterSpace.from_dict(d["space"]) if "space" in d else None,
                name=d.get("name", "plan"),
                anneal=None if anneal is None else AnnealConfig(**anneal),
                sensitivity_points=int(d.get("sensitivity_points", 25)),
                truth=d.get("truth"),
            )
        except (TypeError, ValueError) as exc:
            raise PlanError(f"malformed plan: {exc}") from exc


def load_plan(path) -> IdentificationPlan:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read plan {path}: {exc}") from exc
    return IdentificationPlan.from_dict(data)


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------


@dataclass
class Dataset:
    """Normalized patterns of one stage split into training and test sets."""

    stage: StageSpec
    train_inputs: np.ndarray
    train_targets: np.ndarray
    test_inputs: np.ndarray
    test_targets: np.ndarray
    input_rules: list[NormalizationRule]
    target_rule: NormalizationRule
    train_rows: np.ndarray
    test_rows: np.ndarray
    excluded: dict[int, str] = field(default_factory=dict)

    @property
    def test_truth(self) -> np.ndarray:
        """Test targets in physical units."""
        return denormalize(self.test_targets[:, 0], self.target_rule)


def build_dataset(bundle: CurveBundle, stage: StageSpec, space: ParameterSpace | None = None) -> Dataset:
    """Extract, split and normalize the stage's patterns from a bundle.

    Input rules span the training split's feature range, the target rule the
    parameter bounds. Rows whose features cannot be extracted are left out
    with a warning.
    """
    space = space or bundle.design.space
    raw, targets, rows, excluded = [], [], [], {}
    for i in bundle.valid_rows.tolist():
        point = bundle.point(i)
        try:
            raw.append(extract_features(bundle.curves[i], stage.features, point))
        except DataError as exc:
            log.warning("stage %s: row %d excluded: %s", stage.name, i, exc)
            excluded[i] = str(exc)
            continue
        targets.append(point[stage.target])
        rows.append(i)
    need = stage.train_count + stage.test_count
    if len(rows) < need:
        raise InsufficientDataError(
            f"stage {stage.name}: {len(rows)} usable rows, {need} needed"
        )
    order = np.random.default_rng(stage.seed).permutation(len(rows))
    tr, te = order[: stage.train_count], order[stage.train_count : need]
    F = np.array(raw)
    y = np.array(targets)
    rules = []
    for k, feat in enumerate(stage.features):
        lo, hi = float(F[tr, k].min()), float(F[tr, k].max())
        if lo == hi:
            raise InsufficientDataError(f"stage {stage.name}: feature {feat.label} is constant on the training set")
        rules.append(NormalizationRule((lo, hi)))
    target_rule = space.rule(stage.target)

    def norm(idx):
        X = np.column_stack([normalize(F[idx, k], r) for k, r in enumerate(rules)])
        return X, normalize(y[idx], target_rule).reshape(-1, 1)

    Xtr, Ttr = norm(tr)
    Xte, Tte = norm(te)
    rows = np.array(rows)
    return Dataset(stage, Xtr, Ttr, Xte, Tte, rules, target_rule, rows[tr], rows[te], excluded)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


class TrainingRecord(NamedTuple):
    generation: int
    evaluations: int
    train_error: float
    test_error: float


@dataclass(eq=False)
class TrainedStage:
    """A network plus everything needed to apply it to physical values."""

    stage: StageSpec
    network: Network
    input_rules: list[NormalizationRule]
    target_rule: NormalizationRule
    history: list[TrainingRecord] = field(default_factory=list)

    @property
    def train_error(self) -> float:
        return self.history[-1].train_error if self.history else math.nan

    @property
    def test_error(self) -> float:
        return self.history[-1].test_error if self.history else math.nan

    def predict_normalized(self, features) -> np.ndarray:
        F = np.atleast_2d(np.asarray(features, dtype=float))
        X = np.column_stack([normalize(F[:, k], r) for k, r in enumerate(self.input_rules)])
        return propagate(self.network, X)[:, 0]

    def predict(self, features):
        """Physical target value(s) for physical feature vector(s); never clamped."""
        out = denormalize(self.predict_normalized(features), self.target_rule)
        return float(out[0]) if np.ndim(features) == 1 else out

    def to_dict(self) -> dict:
        return {
            "format": STAGE_FORMAT,
            "stage": self.stage.to_dict(),
            "network": self.network.to_dict(),
            "input_rules": [r.to_dict() for r in self.input_rules],
            "target_rule": self.target_rule.to_dict(),
            "train_error": self.train_error,
            "test_error": self.test_error,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainedStage":
        if d.get("format") != STAGE_FORMAT:
            raise ConfigError(f"unsupported trained-stage format {d.get('format')!r}")
        return cls(
            StageSpec.from_dict(d["stage"]),
            Network.from_dict(d["network"]),
            [NormalizationRule.from_dict(r) for r in d["input_rules"]],
            NormalizationRule.from_dict(d["target_rule"]),
        )

    def save(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        net = directory / "network.json"
        net.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        hist = directory / "history.csv"
        write_training_history(self.history, hist)
        return [net, hist]


def load_trained(path) -> TrainedStage:
    path = Path(path)
    if path.is_dir():
        path = path / "network.json"
    try:
        return TrainedStage.from_dict(json.loads(path.read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load trained stage {path}: {exc}") from exc


def write_training_history(history: Sequence[TrainingRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "evaluations", "train_error", "test_error"])
        for r in history:
            w.writerow([r.generation, r.evaluations, repr(r.train_error), repr(r.test_error)])


def train_stage(
    dataset: Dataset,
    stage: StageSpec | None = None,
    grade_cfg: GradeConfig | None = None,
    ceraf_cfg: CerafConfig | None = None,
) -> TrainedStage:
    """Fit the stage's network to the training patterns with the evolutionary optimizer.

    The weight vector is searched in ``[-weight_bound, weight_bound]``. The
    stage's budget and seed override those of ``grade_cfg``. Each time the
    best training error improves, the test error of the same weights is
    logged next to it.
    """
    stage = stage or dataset.stage
    topo = stage.layout
    if dataset.train_inputs.shape[0] == 0:
        raise InsufficientDataError("empty training set")
    cfg = replace(grade_cfg or GradeConfig(), seed=stage.seed, max_fitness_calls=stage.budget)
    domain = Domain.box(-stage.weight_bound, stage.weight_bound, topo.weight_count)
    X, T = dataset.train_inputs, dataset.train_targets
    Xt, Tt = dataset.test_inputs, dataset.test_targets
    history: list[TrainingRecord] = []

    def objective(W):
        return population_error(topo, W, X, T)

    def monitor(rec, best_x):
        test = float(population_error(topo, best_x[None, :], Xt, Tt)[0])
        history.append(TrainingRecord(rec.generation, rec.evaluations, float(rec.best_value), test))

    result = evolve(objective, domain, cfg, ceraf_cfg, vectorized=True, callback=monitor)
    return TrainedStage(stage, Network(topo, result.x), dataset.input_rules, dataset.target_rule, history)


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


class ValidationCase(NamedTuple):
    true: float
    predicted: float
    absolute_error: float
    normalized_error: float
    relative_error: float


@dataclass
class ValidationReport:
    parameter: str
    bounds: tuple[float, float]
    cases: list[ValidationCase]
    tolerance: float = DEFAULT_TOLERANCE

    @classmethod
    def from_values(cls, parameter, true, predicted, bounds, tolerance=DEFAULT_TOLERANCE,
                    rule: NormalizationRule | None = None) -> "ValidationReport":
        lo, hi = map(float, bounds)
        rule = rule or NormalizationRule((lo, hi))
        cases = []
        for t, p in zip(np.asarray(true, dtype=float).tolist(), np.asarray(predicted, dtype=float).tolist()):
            a = abs(p - t)
            cases.append(ValidationCase(t, p, a, abs(normalize(p, rule) - normalize(t, rule)), a / (hi - lo)))
        if not cases:
            raise InsufficientDataError("validation needs at least one case")
        return cls(parameter, (lo, hi), cases, tolerance)

    def _column(self, name) -> np.ndarray:
        return np.array([getattr(c, name) for c in self.cases])

    @property
    def average_relative(self) -> float:
        return float(np.mean(self._column("relative_error")))

    @property
    def max_relative(self) -> float:
        return float(np.max(self._column("relative_error")))

    @property
    def average_absolute(self) -> float:
        return float(np.mean(self._column("absolute_error")))

    @property
    def max_absolute(self) -> float:
        return float(np.max(self._column("absolute_error")))

    @property
    def passed(self) -> bool:
        return self.max_relative <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "bounds": list(self.bounds),
            "tolerance": self.tolerance,
            "passed": self.passed,
            "average_relative_error": self.average_relative,
            "max_relative_error": self.max_relative,
            "average_absolute_error": self.average_absolute,
            "max_absolute_error": self.max_absolute,
            "average_normalized_error": float(np.mean(self._column("normalized_error"))),
            "max_normalized_error": float(np.max(self._column("normalized_error"))),
            "cases": [c._asdict() for c in self.cases],
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ValidationCase._fields)
            for c in self.cases:
                w.writerow([repr(v) for v in c])

    def summary(self) -> str:
        flag = "pass" if self.passed else "FAIL"
        return (f"{self.parameter}: average {100 * self.average_relative:.2f}%  "
                f"max {100 * self.max_relative:.2f}%  ({flag} at {100 * self.tolerance:g}%)")


def validate_stage(trained: TrainedStage, dataset: Dataset, bounds=None,
                   tolerance: float = DEFAULT_TOLERANCE) -> ValidationReport:
    """Relative-to-interval errors of the trained network on the test split."""
    if dataset.test_inputs.shape[0] == 0:
        raise InsufficientDataError("empty test set")
    bounds = bounds or trained.target_rule.source_interval
    out = propagate(trained.network, dataset.test_inputs)[:, 0]
    pred = denormalize(out, trained.target_rule)
    return ValidationReport.from_values(trained.stage.target, dataset.test_truth, pred, bounds, tolerance,
                                        trained.target_rule)


# --------------------------------------------------------------------------
# coupled pairs
# --------------------------------------------------------------------------


class CoupledSolution(NamedTuple):
    p: float
    q: float
    residual: float
    method: str


def solve_unit_system(
    A: Callable[[np.ndarray], np.ndarray],
    B: Callable[[np.ndarray], np.ndarray],
    *,
    damping: float = 0.5,
    max_steps: int = 1000,
    tol: float = 1e-10,
    grid: int = 512,
    residual_tol: float = 1e-6,
) -> CoupledSolution:
    """Solve ``p = A(q)``, ``q = B(p)`` on the unit box.

    ``A`` and ``B`` take and return arrays. A damped fixed-point iteration
    starts from the box center. If it does not reach ``tol``, a
    ``grid x grid`` scan picks the point with the smallest residual
    ``max(|p - A(q)|, |q - B(p)|)``, and a bracketing root search on
    ``q - B(A(q))`` next to that point refines it.
    """
    def resid(p, q):
        return max(abs(p - float(A(np.array([q]))[0])), abs(q - float(B(np.array([p]))[0])))

    p = q = 0.5
    for _ in range(max_steps):
        a = float(A(np.array([q]))[0])
        b = float(B(np.array([p]))[0])
        if max(abs(p - a), abs(q - b)) < tol:
            return CoupledSolution(p, q, resid(p, q), "fixed-point")
        if not (math.isfinite(a) and math.isfinite(b)):
            break
        p, q = (1 - damping) * p + damping * a, (1 - damping) * q + damping * b

    u = (np.arange(grid) + 0.5) / grid
    Aq = np.asarray(A(u), dtype=float)
    Bp = np.asarray(B(u), dtype=float)
    R = np.maximum(np.abs(u[:, None] - Aq[None, :]), np.abs(u[None, :] - Bp[:, None]))
    i, j = np.unravel_index(int(np.argmin(R)), R.shape)
    best = CoupledSolution(float(u[i]), float(u[j]), float(R[i, j]), "grid")

    def g(qq):
        return qq - float(B(A(np.array([qq])))[0])

    lo, hi = max(0.0, u[j] - 1.0 / grid), min(1.0, u[j] + 1.0 / grid)
    candidates = [best]
    if g(lo) * g(hi) <= 0:
        qs = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        ps = float(A(np.array([qs]))[0])
        candidates.append(CoupledSolution(ps, qs, resid(ps, qs), "grid+root"))
    sol = min(candidates, key=lambda c: c.residual)
    if sol.residual > residual_tol:
        raise NoIntersectionError(f"no intersection within {residual_tol} (best residual {sol.residual:.3g})", sol)
    return sol


def solve_coupled(
    net_a: TrainedStage,
    net_b: TrainedStage,
    curves,
    known: Mapping[str, float] | None = None,
    space: ParameterSpace | None = None,
    **kw,
) -> dict:
    """Intersect two stages that each take the other's target as an input.

    ``net_a`` predicts ``p`` given ``q`` (plus curve features), ``net_b``
    predicts ``q`` given ``p``. The system is solved in the unit box of the
    parameter bounds and the pair is returned in physical units together
    with the residual.
    """
    known = dict(known or {})
    p_name, q_name = net_a.stage.target, net_b.stage.target
    if space is not None:
        p_lo, p_hi = space[p_name].lower, space[p_name].upper
        q_lo, q_hi = space[q_name].lower, space[q_name].upper
    else:
        p_lo, p_hi = net_a.target_rule.source_interval
        q_lo, q_hi = net_b.target_rule.source_interval

    def feature_rows(ts: TrainedStage, partner: str, values: np.ndarray) -> np.ndarray:
        rows = []
        for v in values.tolist():
            rows.append(extract_features(curves, ts.stage.features, {**known, partner: v}))
        return np.array(rows)

    def A(qu):
        q = q_lo + np.asarray(qu) * (q_hi - q_lo)
        return (net_a.predict(feature_rows(net_a, q_name, q)) - p_lo) / (p_hi - p_lo)

    def B(pu):
        p = p_lo + np.asarray(pu) * (p_hi - p_lo)
        return (net_b.predict(feature_rows(net_b, p_name, p)) - q_lo) / (q_hi - q_lo)

    sol = solve_unit_system(A, B, **kw)
    return {
        p_name: p_lo + sol.p * (p_hi - p_lo),
        q_name: q_lo + sol.q * (q_hi - q_lo),
        "residual": sol.residual,
        "method": sol.method,
    }


# --------------------------------------------------------------------------
# identification
# --------------------------------------------------------------------------


class Estimate(NamedTuple):
    parameter: str
    value: float
    in_bounds: bool
    stage: str


def _as_curve_map(measured) -> dict:
    if isinstance(measured, ResponseCurve):
        return {"default": measured}
    return dict(measured)


def identify(
    plan: IdentificationPlan,
    trained: Mapping[str, TrainedStage],
    measured,
    trainer: Callable[[StageSpec, Mapping[str, float]], TrainedStage] | None = None,
) -> dict[str, Estimate]:
    """Apply the stages in order to measured curves.

    ``measured`` is a curve or a mapping from curve name to curve. Stages
    that freeze predicted values get their network from ``trainer`` (called
    with the stage and the predictions so far) unless ``trained`` already
    holds one. Estimates outside the parameter bounds are kept and flagged.
    """
    curves = _as_curve_map(measured)
    values: dict[str, float] = {}
    estimates: dict[str, Estimate] = {}
    done: set[str] = set()

    def network_for(stage):
        if stage.name in trained:
            return trained[stage.name]
        if stage.predicted_freezes and trainer is not None:
            return trainer(stage, dict(values))
        raise PlanError(f"stage {stage.name} has no trained network")

    def record(stage, value):
        p = plan.space[stage.target]
        values[stage.target] = value
        estimates[stage.target] = Estimate(stage.target, value, bool(p.lower <= value <= p.upper), stage.name)

    for stage in plan.stages:
        if stage.name in done:
            continue
        known = {k: float(v) for k, v in stage.frozen.items() if v != PREDICTED}
        known.update(values)
        if stage.coupled_with is not None:
            partner = plan.stage(stage.coupled_with)
            ta, tb = network_for(stage), network_for(partner)
            try:
                sol = solve_coupled(ta, tb, curves, known, plan.space)
            except DataError as exc:
                raise DataError(f"stage {stage.name}: {exc}") from exc
            record(stage, sol[stage.target])
            record(partner, sol[partner.target])
            done.update((stage.name, partner.name))
            continue
        ts = network_for(stage)
        try:
            x = extract_features(curves, stage.features, known)
        except DataError as exc:
            raise DataError(f"stage {stage.name}: {exc}") from exc
        record(stage, ts.predict(x))
        done.add(stage.name)
    return estimates


# --------------------------------------------------------------------------
# orchestration
# --------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def common_strain_grid(bundle: CurveBundle, points: int) -> np.ndarray:
    _, curves = bundle.valid()
    lo = max(c.strain[0] for c in curves)
    hi = min(c.strain[-1] for c in curves)
    return np.linspace(lo, hi, points)


@dataclass
class PlanRun:
    """Outcome of :func:`run_plan`."""

    directory: Path
    trained: dict[str, TrainedStage] = field(default_factory=dict)
    reports: dict[str, ValidationReport] = field(default_factory=dict)
    estimates: dict[str, dict[str, Estimate]] = field(default_factory=dict)
    truth_reports: dict[str, ValidationReport] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)


class _Runner:
    def __init__(self, plan, run_dir, workers, grade_cfg, ceraf_cfg, model):
        self.plan = plan
        self.dir = Path(run_dir)
        self.workers = workers
        self.grade_cfg = grade_cfg
        self.ceraf_cfg = ceraf_cfg
        self.model = model if model is not None else model_from_dict(plan.model)
        self.model_dict = plan.model
        self.seeds: dict[str, int] = {}

    def bundle_for(self, stage: StageSpec, fixed: Mapping[str, float]) -> tuple[CurveBundle, Path, bool]:
        """Simulated bundle over the parameters the stage does not freeze; cached on disk."""
        space = self.plan.space.without(fixed)
        dseed = stage.design_seed if stage.design_seed is not None else stage.seed
        anneal = self.plan.anneal
        key_src = {
            "space": space.to_dict(),
            "fixed": {k: float(v) for k, v in sorted(fixed.items())},
            "n": stage.sample_count,
            "seed": dseed,
            "anneal": None if anneal is None else vars(anneal),
            "model": self.model_dict,
        }
        key = hashlib.sha256(_canonical(key_src).encode()).hexdigest()[:16]
        path = self.dir / "bundles" / key
        self.seeds[f"bundle:{key}"] = dseed
        if (path / "bundle.json").exists():
            return load_bundle(path), path, False
        design = lhs_sample(space, stage.sample_count, dseed)
        if anneal is not None:
            design = decorrelate(design, anneal, seed=dseed)
        bundle = run_batch(self.model, design, fixed, self.workers)
        save_bundle(bundle, path, model=self.model_dict)
        return bundle, path, True

    def sensitivity(self, bundle: CurveBundle, path: Path) -> None:
        if bundle.n_valid < 2 or (path / "sensitivity.csv").exists():
            return
        grid = common_strain_grid(bundle, self.plan.sensitivity_points)
        sensitivity_evolution(bundle, grid).write_csv(path / "sensitivity.csv")
        write_peak_table(peak_sensitivity(bundle), path / "peaks.csv")

    def train(self, stage: StageSpec, fixed: Mapping[str, float], out: Path):
        bundle, bpath, _ = self.bundle_for(stage, fixed)
        if not stage.predicted_freezes:
            self.sensitivity(bundle, bpath)
        data = build_dataset(bundle, stage, self.plan.space)
        ts = train_stage(data, stage, self.grade_cfg, self.ceraf_cfg)
        report = validate_stage(ts, data, (self.plan.space[stage.target].lower, self.plan.space[stage.target].upper))
        ts.save(out)
        _write_json(out / "validation.json", report.to_dict())
        report.write_csv(out / "validation.csv")
        self.seeds[f"stage:{out.relative_to(self.dir).as_posix()}"] = stage.seed
        return ts, report


def run_plan(
    plan: IdentificationPlan,
    run_dir,
    measured: Mapping[str, object] | None = None,
    *,
    workers: int = DEFAULT_WORKERS,
    grade_cfg: GradeConfig | None = None,
    ceraf_cfg: CerafConfig | None = None,
    model=None,
) -> PlanRun:
    """Sample, simulate, analyse, train, validate and identify; persist everything.

    ``measured`` maps a measurement id to a curve (or curve mapping). When
    the plan carries a ``truth`` block (``n`` and ``seed``), synthetic
    measurements are generated from an LHS over the full space, identified,
    and scored against their true parameters. Bundles already present in
    ``run_dir`` are reused. A failing stage is recorded and stages that do
    not depend on it still run.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    runner = _Runner(plan, run_dir, workers, grade_cfg, ceraf_cfg, model)
    result = PlanRun(run_dir)
    _write_json(run_dir / "plan.json", plan.to_dict())

    failed: set[str] = set()
    for stage in plan.stages:
        if stage.predicted_freezes:
            continue
        deps = set(stage.known_inputs) | ({plan.stage(stage.coupled_with).target} if stage.coupled_with else set())
        blocked = [s.name for s in plan.stages if s.target in deps and s.name in failed]
        if blocked:
            failed.add(stage.name)
            result.errors[stage.name] = f"skipped: depends on failed stage(s) {blocked}"
            continue
        fixed = {k: float(v) for k, v in stage.frozen.items()}
        try:
            ts, rep = runner.train(stage, fixed, run_dir / "stages" / stage.name)
        except ParamIdError as exc:
            failed.add(stage.name)
            result.errors[stage.name] = f"{type(exc).__name__}: {exc}"
            log.error("stage %s failed: %s", stage.name, exc)
            continue
        result.trained[stage.name] = ts
        result.reports[stage.name] = rep

    cases: dict[str, object] = dict(measured or {})
    truth_points: dict[str, dict] = {}
    if plan.truth:
        tdesign = lhs_sample(plan.space, int(plan.truth["n"]), int(plan.truth["seed"]))
        runner.seeds["truth"] = int(plan.truth["seed"])
        (run_dir / "truth").mkdir(parents=True, exist_ok=True)
        write_design_csv(tdesign, run_dir / "truth" / "design.csv")
        for i in range(tdesign.n):
            mid = f"truth_{i:02d}"
            point = tdesign.point(i)
            curve = runner.model(point)
            write_curve_csv(curve, run_dir / "truth" / f"{mid}.csv")
            cases[mid] = curve
            truth_points[mid] = point

    for mid, curves in cases.items():
        def trainer(stage, predictions, _mid=mid):
            fixed = {k: float(v) for k, v in stage.frozen.items() if v != PREDICTED}
            fixed.update({k: predictions[k] for k in stage.predicted_freezes})
            ts, rep = runner.train(stage, fixed, run_dir / "measurements" / _mid / stage.name)
            return ts

        try:
            est = identify(plan, result.trained, curves, trainer)
        except ParamIdError as exc:
            result.errors[f"identify:{mid}"] = f"{type(exc).__name__}: {exc}"
            log.error("identification of %s failed: %s", mid, exc)
            continue
        result.estimates[mid] = est

    if result.estimates:
        _write_json(run_dir / "estimates.json", {
            mid: {p: {"value": e.value, "in_bounds": e.in_bounds, "stage": e.stage} for p, e in est.items()}
            for mid, est in result.estimates.items()
        })
    if truth_points:
        scored = [m for m in truth_points if m in result.estimates]
        for p in plan.space.names:
            got = [m for m in scored if p in result.estimates[m]]
            if not got:
                continue
            par = plan.space[p]
            result.truth_reports[p] = ValidationReport.from_values(
                p, [truth_points[m][p] for m in got], [result.estimates[m][p].value for m in got],
                (par.lower, par.upper))
        _write_json(run_dir / "identification.json", {p: r.to_dict() for p, r in result.truth_reports.items()})
    if result.errors:
        _write_json(run_dir / "errors.json", result.errors)
    result.manifest = write_manifest(run_dir, plan.config_hash(), runner.seeds)
    return result


MANIFEST_NAME = "manifest.json"


def write_manifest(run_dir, config_hash: str, seeds: Mapping[str, int]) -> dict:
    """List every file under ``run_dir`` with its SHA-256 digest."""
    run_dir = Path(run_dir)
    files = []
    for path in sorted(p for p in run_dir.rglob("*") if p.is_file() and p.name != MANIFEST_NAME):
        files.append({"path": path.relative_to(run_dir).as_posix(), "sha256": _sha256(path)})
    manifest = {
        "tool": "paramid",
        "version": __version__,
        "config_hash": config_hash,
        "seeds": dict(sorted(seeds.items())),
        "files": files,
    }
    _write_json(run_dir / MANIFEST_NAME, manifest)
    return manifest


def verify_manifest(run_dir) -> list[str]:
    """Paths whose content no longer matches the manifest (empty when intact)."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / MANIFEST_NAME).read_text())
    bad = []
    for entry in manifest["files"]:
        p = run_dir / entry["path"]
        if not p.exists() or _sha256(p) != entry["sha256"]:
            bad.append(entry["path"])
    return bad
