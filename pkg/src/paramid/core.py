"""Domain types shared across the package.

Parameter spaces, response curves, affine normalization and the feature
extractors that turn a stress-strain curve into network inputs.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DegenerateCurveError,
    ExtrapolationError,
    InvalidRuleError,
    ShapeError,
)

DEFAULT_TARGET = (0.15, 0.85)
DEFAULT_YIELD_TOL = 0.05


# --------------------------------------------------------------------------
# parameter space
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Parameter:
    name: str
    lower: float
    upper: float
    unit: str | None = None

    def __post_init__(self):
        if not self.name.isidentifier():
            raise ConfigError(f"parameter name {self.name!r} is not an identifier")
        lo, hi = float(self.lower), float(self.upper)
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ConfigError(f"parameter {self.name}: need lower < upper, got [{lo}, {hi}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class ParameterSpace:
    """Ordered, named box bounds of the identification unknowns."""

    params: tuple[Parameter, ...]

    def __post_init__(self):
        params = tuple(self.params)
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate parameter names in {names}")
        object.__setattr__(self, "params", params)

    @classmethod
    def from_bounds(cls, bounds: Mapping[str, tuple[float, float]]) -> "ParameterSpace":
        return cls(tuple(Parameter(k, lo, hi) for k, (lo, hi) in bounds.items()))

    def __len__(self):
        return len(self.params)

    def __iter__(self):
        return iter(self.params)

    def __contains__(self, name):
        return any(p.name == name for p in self.params)

    def __getitem__(self, name: str) -> Parameter:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def lower(self) -> np.ndarray:
        return np.array([p.lower for p in self.params])

    @property
    def upper(self) -> np.ndarray:
        return np.array([p.upper for p in self.params])

    def index(self, name: str) -> int:
        return self.names.index(name)

    def subspace(self, names: Iterable[str]) -> "ParameterSpace":
        return ParameterSpace(tuple(self[n] for n in names))

    def without(self, names: Iterable[str]) -> "ParameterSpace":
        drop = set(names)
        return ParameterSpace(tuple(p for p in self.params if p.name not in drop))

    def rule(self, name: str, target=DEFAULT_TARGET) -> "NormalizationRule":
        p = self[name]
        return NormalizationRule((p.lower, p.upper), target)

    def to_dict(self) -> dict:
        return {
            "params": [
                {"name": p.name, "lower": p.lower, "upper": p.upper, "unit": p.unit}
                for p in self.params
            ]
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ParameterSpace":
        try:
            items = data["params"]
            return cls(
                tuple(
                    Parameter(d["name"], d["lower"], d["upper"], d.get("unit"))
                    for d in items
                )
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed parameter space: {exc}") from exc


def load_space(path) -> ParameterSpace:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read parameter space {path}: {exc}") from exc
    return ParameterSpace.from_dict(data)


def save_space(space: ParameterSpace, path) -> None:
    Path(path).write_text(json.dumps(space.to_dict(), indent=2) + "\n")


# --------------------------------------------------------------------------
# normalization
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalizationRule:
    """Affine map from ``source_interval`` onto ``target_interval``.

    The map is not clamped: values outside the source interval land outside
    the target interval.
    """

    source_interval: tuple[float, float]
    target_interval: tuple[float, float] = DEFAULT_TARGET

    def __post_init__(self):
        for label, (lo, hi) in (("source", self.source_interval), ("target", self.target_interval)):
            lo, hi = float(lo), float(hi)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo == hi:
                raise InvalidRuleError(f"degenerate {label} interval [{lo}, {hi}]")
        object.__setattr__(self, "source_interval", tuple(map(float, self.source_interval)))
        object.__setattr__(self, "target_interval", tuple(map(float, self.target_interval)))

    def to_dict(self):
        return {"source": list(self.source_interval), "target": list(self.target_interval)}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(data["source"]), tuple(data["target"]))


def _as_value(value):
    return np.asarray(value, dtype=float) if np.ndim(value) else float(value)


def normalize(value, rule: NormalizationRule):
    s0, s1 = rule.source_interval
    t0, t1 = rule.target_interval
    return t0 + (_as_value(value) - s0) * ((t1 - t0) / (s1 - s0))


def denormalize(value, rule: NormalizationRule):
    s0, s1 = rule.source_interval
    t0, t1 = rule.target_interval
    return s0 + (_as_value(value) - t0) * ((s1 - s0) / (t1 - t0))


# --------------------------------------------------------------------------
# response curves
# --------------------------------------------------------------------------


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ResponseCurve:
    """Stress response sampled on a strictly increasing strain grid."""

    strain: np.ndarray
    stress: np.ndarray
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        strain = _frozen_array(self.strain)
        stress = _frozen_array(self.stress)
        if strain.ndim != 1 or stress.ndim != 1 or strain.shape != stress.shape:
            raise ShapeError("strain and stress must be 1-D arrays of equal length")
        if strain.size < 2:
            raise ShapeError("a curve needs at least two points")
        if not np.all(np.isfinite(strain)) or not np.all(np.isfinite(stress)):
            raise DataError("curve contains non-finite values")
        if np.any(np.diff(strain) <= 0):
            raise DataError("strain must be strictly increasing")
        object.__setattr__(self, "strain", strain)
        object.__setattr__(self, "stress", stress)
        object.__setattr__(self, "meta", dict(self.meta))

    def __len__(self):
        return self.strain.size

    def __eq__(self, other):
        if not isinstance(other, ResponseCurve):
            return NotImplemented
        return (
            np.array_equal(self.strain, other.strain)
            and np.array_equal(self.stress, other.stress)
        )

    __hash__ = None


def read_curve_csv(path, meta=None) -> ResponseCurve:
    """Read a ``strain,stress`` CSV file."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["strain", "stress"]:
                raise DataError(f"{path}: expected header 'strain,stress', got {header}")
            strain, stress = [], []
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != 2:
                    raise DataError(f"{path}:{lineno}: expected 2 columns")
                try:
                    strain.append(float(row[0]))
                    stress.append(float(row[1]))
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise DataError(f"cannot read curve {path}: {exc}") from exc
    return ResponseCurve(strain, stress, meta or {"source": path.name})


def write_curve_csv(curve: ResponseCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("strain,stress\n")
        for e, s in zip(curve.strain.tolist(), curve.stress.tolist()):
            fh.write(f"{e!r},{s!r}\n")


# --------------------------------------------------------------------------
# feature extraction
# --------------------------------------------------------------------------


class CurvePoint(NamedTuple):
    strain: float
    stress: float


class YieldPoint(NamedTuple):
    strain: float
    stress: float
    yielded: bool


def extract_peak(curve: ResponseCurve) -> CurvePoint:
    # np.argmax returns the first maximum, i.e. the smallest strain on ties
    k = int(np.argmax(curve.stress))
    return CurvePoint(float(curve.strain[k]), float(curve.stress[k]))


def extract_yield(curve: ResponseCurve, deviation_tol: float = DEFAULT_YIELD_TOL) -> YieldPoint:
    """End of the elastic stage, located on the native grid.

    The initial tangent modulus is the mean secant modulus of the first two
    points with nonzero strain. The yield point is the first grid point whose
    secant modulus drops below ``(1 - deviation_tol)`` times that value. If no
    point qualifies, the last point is returned with ``yielded=False``.
    """
    if not 0.0 < deviation_tol < 1.0:
        raise ConfigError(f"deviation_tol must lie in (0, 1), got {deviation_tol}")
    if len(curve) < 3:
        raise DataError("yield extraction needs at least three points")
    if not np.any(curve.stress):
        raise DegenerateCurveError("all stresses are zero")
    nz = np.flatnonzero(curve.strain != 0.0)
    if nz.size < 2:
        raise DegenerateCurveError("need two nonzero-strain points")
    secant = curve.stress[nz] / curve.strain[nz]
    e0 = 0.5 * (secant[0] + secant[1])
    if e0 == 0.0:
        raise DegenerateCurveError("initial tangent modulus is zero")
    threshold = (1.0 - deviation_tol) * e0
    below = secant < threshold if e0 > 0 else secant > threshold
    hits = np.flatnonzero(below)
    if hits.size == 0:
        return YieldPoint(float(curve.strain[-1]), float(curve.stress[-1]), False)
    k = nz[hits[0]]
    return YieldPoint(float(curve.strain[k]), float(curve.stress[k]), True)


def stress_at_strain(curve: ResponseCurve, strain):
    """Piecewise-linear stress at ``strain`` (scalar or array), exact on grid points."""
    q = np.asarray(strain, dtype=float)
    lo, hi = curve.strain[0], curve.strain[-1]
    if np.any(q < lo) or np.any(q > hi) or not np.all(np.isfinite(q)):
        raise ExtrapolationError(f"strain outside curve range [{lo}, {hi}]")
    k = np.searchsorted(curve.strain, q, side="right") - 1
    k = np.clip(k, 0, len(curve) - 2)
    e0, e1 = curve.strain[k], curve.strain[k + 1]
    s0, s1 = curve.stress[k], curve.stress[k + 1]
    t = (q - e0) / (e1 - e0)
    out = np.where(t == 0.0, s0, np.where(t == 1.0, s1, s0 + t * (s1 - s0)))
    return float(out) if out.ndim == 0 else out


FEATURE_KINDS = (
    "stress_at_index",
    "stress_at_strain",
    "peak_strain",
    "peak_stress",
    "yield_strain",
    "yield_stress",
    "known_parameter",
)


@dataclass(frozen=True)
class CurveFeature:
    """One scalar network input derived from a curve or a known parameter.

    ``argument`` is an integer grid index for ``stress_at_index``, a strain
    for ``stress_at_strain``, an optional deviation tolerance for the yield
    kinds, a parameter name for ``known_parameter`` and ``None`` for the peak
    kinds. ``curve`` names which measured test the feature is read from when
    a plan uses more than one experiment.
    """

    kind: str
    argument: object = None
    curve: str = "default"

    def __post_init__(self):
        kind, arg = self.kind, self.argument
        if kind not in FEATURE_KINDS:
            raise ConfigError(f"unknown feature kind {kind!r}")
        ok = {
            "stress_at_index": isinstance(arg, int) and not isinstance(arg, bool),
            "stress_at_strain": isinstance(arg, (int, float)) and not isinstance(arg, bool),
            "peak_strain": arg is None,
            "peak_stress": arg is None,
            "yield_strain": arg is None or (isinstance(arg, float) and 0 < arg < 1),
            "yield_stress": arg is None or (isinstance(arg, float) and 0 < arg < 1),
            "known_parameter": isinstance(arg, str) and arg.isidentifier(),
        }[kind]
        if not ok:
            raise ConfigError(f"feature {kind!r} cannot take argument {arg!r}")

    @property
    def label(self) -> str:
        if self.argument is None:
            return self.kind
        return f"{self.kind}[{self.argument}]"

    def to_dict(self):
        d = {"kind": self.kind}
        if self.argument is not None:
            d["argument"] = self.argument
        if self.curve != "default":
            d["curve"] = self.curve
        return d

    @classmethod
    def from_dict(cls, data):
        if isinstance(data, str):
            return cls(data)
        arg = data.get("argument")
        if data.get("kind") in ("stress_at_strain", "yield_strain", "yield_stress") and isinstance(arg, int):
            arg = float(arg)
        return cls(data["kind"], arg, data.get("curve", "default"))


def extract_feature(
    curve: ResponseCurve | None,
    feature: CurveFeature,
    known: Mapping[str, float] | None = None,
) -> float:
    kind, arg = feature.kind, feature.argument
    if kind == "known_parameter":
        if known is None or arg not in known:
            raise DataError(f"no value available for parameter {arg!r}")
        return float(known[arg])
    if curve is None:
        raise DataError(f"feature {feature.label} needs a curve")
    if kind == "stress_at_index":
        if not -len(curve) <= arg < len(curve):
            raise DataError(f"index {arg} outside curve of {len(curve)} points")
        return float(curve.stress[arg])
    if kind == "stress_at_strain":
        return stress_at_strain(curve, arg)
    if kind in ("peak_strain", "peak_stress"):
        peak = extract_peak(curve)
        return peak.strain if kind == "peak_strain" else peak.stress
    tol = DEFAULT_YIELD_TOL if arg is None else arg
    y = extract_yield(curve, tol)
    return y.strain if kind == "yield_strain" else y.stress


def extract_features(
    curves: Mapping[str, ResponseCurve] | ResponseCurve | None,
    features: Sequence[CurveFeature],
    known: Mapping[str, float] | None = None,
) -> np.ndarray:
    if curves is None or isinstance(curves, ResponseCurve):
        curves = {"default": curves}
    out = np.empty(len(features))
    for i, feat in enumerate(features):
        out[i] = extract_feature(curves.get(feat.curve), feat, known)
    return out
