"""Latin Hypercube designs and annealing-based decorrelation."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import ParameterSpace
from .errors import ConfigError, DataError, ShapeError, UndefinedCorrelationError

OBJECTIVES = ("max_abs_offdiag", "frobenius_offdiag")


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """``n`` samples (rows) by ``d`` parameters (columns)."""

    space: ParameterSpace
    rows: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != len(self.space):
            raise ShapeError(f"design needs {len(self.space)} columns, got shape {rows.shape}")
        lo, hi = self.space.lower, self.space.upper
        if np.any(rows < lo) or np.any(rows > hi):
            raise DataError("design entries outside parameter bounds")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.space.index(name)]

    def point(self, i: int) -> dict[str, float]:
        return dict(zip(self.space.names, self.rows[i].tolist()))

    def take(self, index) -> "DesignMatrix":
        return DesignMatrix(self.space, self.rows[np.asarray(index)], self.seed)


@dataclass(frozen=True)
class AnnealConfig:
    initial_temperature: float = 1.0
    cooling_factor: float = 0.95
    sweeps: int = 200
    objective: str = "max_abs_offdiag"

    def __post_init__(self):
        if self.sweeps < 1:
            raise ConfigError("sweeps must be at least 1")
        if not 0.0 < self.cooling_factor < 1.0:
            raise ConfigError("cooling_factor must lie in (0, 1)")
        if self.initial_temperature <= 0:
            raise ConfigError("initial_temperature must be positive")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}")


def lhs_sample(space: ParameterSpace, n: int, seed: int, jitter: bool = False) -> DesignMatrix:
    """One value per equiprobable stratum and column, strata shuffled per column.

    Values sit at stratum midpoints unless ``jitter`` is set, in which case
    they are drawn uniformly inside their stratum.
    """
    if n < 1:
        raise ConfigError("n must be at least 1")
    rng = np.random.default_rng(seed)
    d = len(space)
    u = np.empty((n, d))
    for k in range(d):
        offset = rng.random(n) if jitter else 0.5
        u[:, k] = (rng.permutation(n) + offset) / n
    rows = space.lower + u * (space.upper - space.lower)
    return DesignMatrix(space, np.clip(rows, space.lower, space.upper), seed)


def stratum_counts(design: DesignMatrix) -> np.ndarray:
    """``(n, d)`` count of samples falling in each stratum of each column."""
    n = design.n
    lo, hi = design.space.lower, design.space.upper
    u = (design.rows - lo) / (hi - lo) * n
    k = np.clip(np.floor(u), 0, n - 1).astype(int)
    counts = np.zeros((n, design.d), dtype=int)
    for j in range(design.d):
        counts[:, j] = np.bincount(k[:, j], minlength=n)
    return counts


def has_lhs_property(design: DesignMatrix) -> bool:
    return bool(np.all(stratum_counts(design) == 1))


def _standardized(rows: np.ndarray) -> np.ndarray:
    centered = rows - rows.mean(axis=0)
    norms = np.sqrt(np.sum(centered**2, axis=0))
    if np.any(norms == 0):
        raise UndefinedCorrelationError("constant column in design")
    return centered / norms


def correlation_matrix(design: DesignMatrix | np.ndarray) -> np.ndarray:
    """Pairwise Pearson coefficients of the design columns."""
    rows = design.rows if isinstance(design, DesignMatrix) else np.asarray(design, dtype=float)
    if rows.shape[0] < 2:
        raise DataError("correlation needs at least two samples")
    z = _standardized(rows)
    c = np.clip(z.T @ z, -1.0, 1.0)
    np.fill_diagonal(c, 1.0)
    return c


def _offdiag_objective(c: np.ndarray, kind: str) -> float:
    off = c[~np.eye(c.shape[0], dtype=bool)]
    if off.size == 0:
        return 0.0
    if kind == "max_abs_offdiag":
        return float(np.max(np.abs(off)))
    return float(np.sqrt(0.5 * np.sum(off**2)))


def design_objective(design: DesignMatrix, kind: str = "max_abs_offdiag") -> float:
    return _offdiag_objective(correlation_matrix(design), kind)


def decorrelate(design: DesignMatrix, cfg: AnnealConfig | None = None, seed: int = 0) -> DesignMatrix:
    """Reduce spurious column correlation by simulated annealing.

    Each proposal swaps two entries of one randomly chosen column, so every
    column keeps its multiset of values and the LHS property survives. A
    proposal is accepted by the Metropolis rule at the current temperature;
    the temperature drops geometrically after every sweep of ``n``
    proposals. The best design visited is returned, so the objective never
    increases.
    """
    cfg = cfg or AnnealConfig()
    n, d = design.n, design.d
    if n < 3 or d < 2:
        return design
    rows = design.rows.copy()
    z = _standardized(rows)
    c = z.T @ z
    kind = cfg.objective
    mask = ~np.eye(d, dtype=bool)

    def score(cm):
        off = cm[mask]
        if kind == "max_abs_offdiag":
            return float(np.max(np.abs(off)))
        return float(np.sqrt(0.5 * np.sum(off**2)))

    start = _offdiag_objective(correlation_matrix(rows), kind)
    current = score(c)
    best_rows, best = rows.copy(), current
    rng = np.random.default_rng(seed)
    temperature = cfg.initial_temperature
    for _ in range(cfg.sweeps):
        cols = rng.integers(d, size=n)
        pairs = rng.integers(n, size=(n, 2))
        accept_u = rng.random(n)
        for k, (a, b), u in zip(cols.tolist(), pairs.tolist(), accept_u.tolist()):
            if a == b:
                continue
            delta = (z[b, k] - z[a, k]) * (z[a] - z[b])
            delta[k] = 0.0
            new_row = c[k] + delta
            trial = c.copy()
            trial[k] = new_row
            trial[:, k] = new_row
            trial[k, k] = c[k, k]
            value = score(trial)
            diff = value - current
            if diff <= 0 or u < math.exp(-diff / temperature):
                z[[a, b], k] = z[[b, a], k]
                rows[[a, b], k] = rows[[b, a], k]
                c = trial
                current = value
                if current < best:
                    best, best_rows = current, rows.copy()
        temperature *= cfg.cooling_factor
        # refresh to keep rounding drift out of the running matrix
        c = z.T @ z
        current = score(c)
    out = DesignMatrix(design.space, best_rows, design.seed)
    if _offdiag_objective(correlation_matrix(best_rows), kind) > start:
        return design
    return out


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def write_design_csv(design: DesignMatrix, path, meta: dict | None = None) -> Path:
    """Write the design and a ``.meta.json`` sidecar carrying the seed."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(design.space.names)
        for row in design.rows.tolist():
            w.writerow([repr(v) for v in row])
    sidecar = path.with_name(path.name + ".meta.json")
    info = {"seed": design.seed, "n": design.n, "space": design.space.to_dict()}
    if meta:
        info.update(meta)
    sidecar.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return sidecar


def read_design_csv(path, space: ParameterSpace | None = None) -> DesignMatrix:
    path = Path(path)
    sidecar = path.with_name(path.name + ".meta.json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    if space is None:
        if "space" not in meta:
            raise ConfigError(f"{path}: no parameter space given and no sidecar found")
        space = ParameterSpace.from_dict(meta["space"])
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            values = [[float(v) for v in row] for row in reader if row]
    except (OSError, StopIteration, ValueError) as exc:
        raise DataError(f"cannot read design {path}: {exc}") from exc
    if header != space.names:
        raise DataError(f"{path}: columns {header} do not match space {space.names}")
    return DesignMatrix(space, np.array(values).reshape(-1, len(space)), meta.get("seed"))


def anneal_config_dict(cfg: AnnealConfig) -> dict:
    return asdict(cfg)
