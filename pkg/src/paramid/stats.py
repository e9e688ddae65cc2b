"""Pearson correlation and stochastic sensitivity of curve bundles."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .core import ResponseCurve, extract_peak, read_curve_csv, stress_at_strain, write_curve_csv
from .doe import DesignMatrix, read_design_csv, write_design_csv
from .errors import DataError, InsufficientDataError, ShapeError, UndefinedCorrelationError


def pearson(x, y) -> float:
    """Pearson product-moment correlation, evaluated in two passes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise ShapeError(f"pearson needs two vectors of equal length, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ShapeError("pearson needs at least two values")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation with a constant input is undefined")
    r = np.dot(dx, dy) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def _column_pearson(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Correlation of every column of ``X`` with every column of ``Y``.

    Columns of ``Y`` without variance yield 0: no measurable sensitivity.
    """
    dx = X - X.mean(axis=0)
    dy = Y - Y.mean(axis=0)
    sx = np.sqrt(np.sum(dx**2, axis=0))
    sy = np.sqrt(np.sum(dy**2, axis=0))
    if np.any(sx == 0):
        raise UndefinedCorrelationError("constant design column")
    num = dx.T @ dy
    with np.errstate(invalid="ignore", divide="ignore"):
        r = num / np.outer(sx, sy)
    r[:, sy == 0] = 0.0
    return np.clip(r, -1.0, 1.0)


@dataclass
class CurveBundle:
    """Simulated curves, one per design row; failed rows carry ``None``."""

    design: DesignMatrix
    curves: list
    valid_mask: np.ndarray = None
    failures: dict = field(default_factory=dict)
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.curves) != self.design.n:
            raise ShapeError(f"{len(self.curves)} curves for {self.design.n} design rows")
        if self.valid_mask is None:
            self.valid_mask = np.array([c is not None for c in self.curves], dtype=bool)
        else:
            self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
            for ok, c in zip(self.valid_mask, self.curves):
                if ok and c is None:
                    raise ShapeError("row marked valid has no curve")

    @property
    def valid_rows(self) -> np.ndarray:
        return np.flatnonzero(self.valid_mask)

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())

    def valid(self) -> tuple[np.ndarray, list[ResponseCurve]]:
        idx = self.valid_rows
        return self.design.rows[idx], [self.curves[i] for i in idx]

    def point(self, i: int) -> dict[str, float]:
        p = dict(self.fixed)
        p.update(self.design.point(i))
        return p


@dataclass
class SensitivityTrace:
    strain_grid: np.ndarray
    coefficients: dict[str, np.ndarray]

    def write_csv(self, path) -> None:
        names = list(self.coefficients)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["strain", *names])
            for k, e in enumerate(self.strain_grid.tolist()):
                w.writerow([repr(e), *(repr(float(self.coefficients[n][k])) for n in names)])


class PeakSensitivity(NamedTuple):
    parameter: str
    r_peak_strain: float
    r_peak_stress: float


def _require_valid(bundle: CurveBundle, minimum: int = 2):
    if bundle.n_valid < minimum:
        raise InsufficientDataError(f"need at least {minimum} valid curves, bundle has {bundle.n_valid}")


def sensitivity_evolution(bundle: CurveBundle, common_grid: Sequence[float]) -> SensitivityTrace:
    """Pearson coefficient of every parameter against the stress at each grid strain.

    Failed simulations are dropped row-wise. Grid strains at which the
    stress does not vary across the bundle get a coefficient of 0.
    """
    _require_valid(bundle)
    grid = np.asarray(common_grid, dtype=float)
    X, curves = bundle.valid()
    S = np.array([stress_at_strain(c, grid) for c in curves]).reshape(len(curves), grid.size)
    R = _column_pearson(X, S)
    names = bundle.design.space.names
    return SensitivityTrace(grid, {n: R[i] for i, n in enumerate(names)})


def peak_sensitivity(bundle: CurveBundle) -> list[PeakSensitivity]:
    _require_valid(bundle)
    X, curves = bundle.valid()
    peaks = np.array([extract_peak(c) for c in curves])
    # a peak coordinate shared by every curve gets 0, as in sensitivity_evolution
    R = _column_pearson(X, peaks)
    return [
        PeakSensitivity(name, float(R[i, 0]), float(R[i, 1]))
        for i, name in enumerate(bundle.design.space.names)
    ]


def write_peak_table(rows: Sequence[PeakSensitivity], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "r_peak_strain", "r_peak_stress"])
        for r in rows:
            w.writerow([r.parameter, repr(r.r_peak_strain), repr(r.r_peak_stress)])


def format_peak_table(rows: Sequence[PeakSensitivity], digits: int = 3) -> str:
    """Plain-text table in the layout of a published sensitivity table."""
    width = max(9, *(len(r.parameter) for r in rows))
    lines = [f"{'Parameter':<{width}} {'eps':>8} {'sigma':>8}"]
    for r in rows:
        lines.append(f"{r.parameter:<{width}} {r.r_peak_strain:>8.{digits}f} {r.r_peak_stress:>8.{digits}f}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# bundle directories
# --------------------------------------------------------------------------

BUNDLE_FORMAT = "paramid.bundle/1"


def save_bundle(bundle: CurveBundle, directory, model: dict | None = None) -> Path:
    """Write ``design.csv``, ``curves/row_XXXX.csv`` and ``bundle.json``."""
    directory = Path(directory)
    (directory / "curves").mkdir(parents=True, exist_ok=True)
    write_design_csv(bundle.design, directory / "design.csv")
    for i, c in enumerate(bundle.curves):
        if c is not None:
            write_curve_csv(c, directory / "curves" / f"row_{i:04d}.csv")
    info = {
        "format": BUNDLE_FORMAT,
        "n": bundle.design.n,
        "valid": bundle.valid_mask.astype(int).tolist(),
        "failures": {str(k): v for k, v in sorted(bundle.failures.items())},
        "fixed": bundle.fixed,
        "invalid_rows": "excluded row-wise from every correlation",
    }
    if model is not None:
        info["model"] = model
    path = directory / "bundle.json"
    path.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return path


def load_bundle(directory) -> CurveBundle:
    directory = Path(directory)
    try:
        info = json.loads((directory / "bundle.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{directory} is not a bundle directory: {exc}") from exc
    if info.get("format") != BUNDLE_FORMAT:
        raise DataError(f"{directory}: unsupported bundle format {info.get('format')!r}")
    design = read_design_csv(directory / "design.csv")
    curves = []
    for i, ok in enumerate(info["valid"]):
        if ok:
            c = read_curve_csv(directory / "curves" / f"row_{i:04d}.csv")
            curves.append(ResponseCurve(c.strain, c.stress, {"row": i}))
        else:
            curves.append(None)
    failures = {int(k): v for k, v in info.get("failures", {}).items()}
    return CurveBundle(design, curves, np.array(info["valid"], dtype=bool), failures, info.get("fixed", {}))
