"""GRADE real-coded evolutionary minimizer with CERAF restarts.

One generation consists of

1. mutation: each member is mutated with probability ``radioactivity``
   (the mutant joins the pool) or, when it sits inside a radioactive zone,
   with probability ``zone_mutation_probability`` (the mutant replaces it);
2. gradient cross-over: as many children as the population holds, each made
   from a random pair by stepping from the worse parent through the better
   one, ``better + CR * (better - worse)`` with ``CR ~ U(0, CL)``;
3. modified tournament selection: random pairs are drawn from the pool and
   the worse one is discarded until the population size is restored.

With CERAF enabled, a run whose best value stagnates for
``stagnation_generations`` generations marks a hyper-ellipsoidal zone around
that best point and restarts the population from scratch. The best point
seen over all restarts is returned.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Domain:
    bounds: np.ndarray

    def __post_init__(self):
        b = np.array(self.bounds, dtype=float).reshape(-1, 2)
        if b.shape[0] == 0 or np.any(~np.isfinite(b)) or np.any(b[:, 0] >= b[:, 1]):
            raise ConfigError("domain bounds need finite lower < upper")
        b.setflags(write=False)
        object.__setattr__(self, "bounds", b)

    @classmethod
    def box(cls, lower, upper, n):
        return cls(np.tile([float(lower), float(upper)], (n, 1)))

    @property
    def n(self) -> int:
        return self.bounds.shape[0]

    @property
    def lower(self) -> np.ndarray:
        return self.bounds[:, 0]

    @property
    def upper(self) -> np.ndarray:
        return self.bounds[:, 1]

    @property
    def width(self) -> np.ndarray:
        return self.bounds[:, 1] - self.bounds[:, 0]

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def random(self, rng, size=None) -> np.ndarray:
        shape = (self.n,) if size is None else (size, self.n)
        return self.lower + rng.random(shape) * self.width


@dataclass
class GradeConfig:
    pool_rate: int = 10
    radioactivity: float = 0.2
    cross_limit: float = 1.0
    max_fitness_calls: int = 100_000
    seed: int = 0
    # stop as soon as the best value reaches this level
    target_value: float | None = None

    def __post_init__(self):
        if self.pool_rate < 2:
            raise ConfigError("pool_rate must be at least 2")
        if not 0.0 <= self.radioactivity <= 1.0:
            raise ConfigError("radioactivity must lie in [0, 1]")
        if self.cross_limit <= 0:
            raise ConfigError("cross_limit must be positive")
        if self.max_fitness_calls < 1:
            raise ConfigError("max_fitness_calls must be positive")


@dataclass
class CerafConfig:
    enabled: bool = True
    stagnation_generations: int = 100
    stagnation_epsilon: float = 5e-11
    # fraction of each variable interval spanned by the zone diameter
    zone_radius_fraction: float = 0.75
    zone_mutation_probability: float = 1.0
    radius_decay: float = 0.997

    def __post_init__(self):
        if self.stagnation_generations < 1 or self.stagnation_epsilon <= 0:
            raise ConfigError("stagnation settings must be positive")
        if not 0.0 < self.zone_radius_fraction <= 1.0:
            raise ConfigError("zone_radius_fraction must lie in (0, 1]")
        if not 0.0 < self.zone_mutation_probability <= 1.0:
            raise ConfigError("zone_mutation_probability must lie in (0, 1]")
        if not 0.0 < self.radius_decay < 1.0:
            raise ConfigError("radius_decay must lie in (0, 1)")


@dataclass
class RadioactiveZone:
    center: np.ndarray
    semi_axes: np.ndarray
    intrusions: int = 0

    def __post_init__(self):
        self.center = np.array(self.center, dtype=float)
        self.semi_axes = np.array(self.semi_axes, dtype=float)
        if np.any(self.semi_axes <= 0):
            raise ConfigError("zone semi-axes must be positive")

    def contains(self, points) -> np.ndarray | bool:
        p = np.asarray(points, dtype=float)
        r2 = np.sum(((p - self.center) / self.semi_axes) ** 2, axis=-1)
        return r2 <= 1.0

    def decay(self, factor: float, count: int = 1) -> None:
        if count:
            self.semi_axes = self.semi_axes * factor**count
            self.intrusions += count


@dataclass
class Chromosome:
    x: np.ndarray
    fitness: float = math.inf


# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------


def _mutate_points(X, domain: Domain, rng) -> np.ndarray:
    k = X.shape[0]
    rp = domain.random(rng, k)
    mr = rng.random((k, 1))
    return np.clip(X + mr * (rp - X), domain.lower, domain.upper)


def _crossover_points(Xq, fq, Xr, fr, cross_limit, domain: Domain | None, rng) -> np.ndarray:
    q_better = (fq <= fr)[:, None]
    better = np.where(q_better, Xq, Xr)
    worse = np.where(q_better, Xr, Xq)
    cr = rng.random((Xq.shape[0], 1)) * cross_limit
    child = better + cr * (better - worse)
    if domain is None:
        return child
    return np.clip(child, domain.lower, domain.upper)


def _tournament(fitness: np.ndarray, target_size: int, rng) -> np.ndarray:
    """Indices of the survivors of random-pair tournaments."""
    m = fitness.shape[0]
    rounds = m - target_size
    if rounds <= 0:
        return np.arange(m)
    alive = list(range(m))
    draws = rng.random((rounds, 2)).tolist()
    f = fitness.tolist()
    for u0, u1 in draws:
        size = len(alive)
        i = int(u0 * size)
        j = int(u1 * (size - 1))
        if j >= i:
            j += 1
        # the worse one goes; equal fitness discards the second of the pair
        loser = i if f[alive[j]] < f[alive[i]] else j
        alive[loser] = alive[-1]
        alive.pop()
    return np.array(sorted(alive), dtype=int)


def mutate(parent: Chromosome, domain: Domain, rng) -> Chromosome:
    """``x + MR * (RP - x)`` with ``RP`` uniform in the domain and ``MR ~ U(0, 1)``.

    The child carries no fitness yet.
    """
    child = _mutate_points(np.asarray(parent.x, dtype=float)[None, :], domain, rng)[0]
    return Chromosome(child)


def crossover(q: Chromosome, r: Chromosome, cfg: GradeConfig, rng, domain: Domain | None = None) -> Chromosome:
    """Step from the worse parent through the better one by ``CR ~ U(0, CL)``.

    Children are clipped to ``domain`` per coordinate when one is given.
    """
    xq = np.asarray(q.x, dtype=float)[None, :]
    xr = np.asarray(r.x, dtype=float)[None, :]
    fq = np.array([q.fitness], dtype=float)
    fr = np.array([r.fitness], dtype=float)
    return Chromosome(_crossover_points(xq, fq, xr, fr, cfg.cross_limit, domain, rng)[0])


def select(population: Sequence[Chromosome], target_size: int, rng) -> list[Chromosome]:
    if target_size > len(population):
        raise ValueError("target_size exceeds population size")
    f = np.array([c.fitness for c in population], dtype=float)
    f = np.where(np.isfinite(f), f, np.inf)
    keep = _tournament(f, target_size, rng)
    return [population[i] for i in keep]


# --------------------------------------------------------------------------
# main loop
# --------------------------------------------------------------------------


class GenerationRecord(NamedTuple):
    generation: int
    evaluations: int
    best_value: float
    restarts: int
    nonfinite: int


@dataclass
class EvolveResult:
    x: np.ndarray
    value: float
    history: list[GenerationRecord]
    evaluations: int
    restarts: int
    zones: list[RadioactiveZone] = field(default_factory=list)

    def write_history(self, path) -> None:
        write_history_csv(self.history, path)


def write_history_csv(history: Sequence[GenerationRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "evaluations", "best_value", "restarts"])
        for rec in history:
            w.writerow([rec.generation, rec.evaluations, repr(float(rec.best_value)), rec.restarts])


class _Evaluator:
    def __init__(self, objective, vectorized: bool, budget: int):
        self.objective = objective
        self.vectorized = vectorized
        self.budget = budget
        self.calls = 0
        self.nonfinite = 0

    @property
    def remaining(self) -> int:
        return self.budget - self.calls

    def __call__(self, X: np.ndarray) -> np.ndarray:
        if X.shape[0] == 0:
            return np.empty(0)
        if self.vectorized:
            f = np.asarray(self.objective(X), dtype=float).reshape(X.shape[0])
        else:
            f = np.array([float(self.objective(x)) for x in X])
        self.calls += X.shape[0]
        bad = ~np.isfinite(f)
        if bad.any():
            self.nonfinite += int(bad.sum())
            f = np.where(bad, np.inf, f)
        return f


def evolve(
    objective: Callable,
    domain: Domain,
    grade_cfg: GradeConfig | None = None,
    ceraf_cfg: CerafConfig | None = None,
    *,
    vectorized: bool = False,
    callback: Callable | None = None,
) -> EvolveResult:
    """Minimize ``objective`` over ``domain``.

    Parameters
    ----------
    objective : callable
        Maps a point (1-D array) to a float, or with ``vectorized=True`` a
        ``(k, n)`` array of points to ``k`` values. Non-finite values rank
        worst and are counted in the history.
    domain : Domain
    grade_cfg, ceraf_cfg : optional configurations (defaults as documented).
    callback : callable, optional
        Called as ``callback(record, best_x)`` after every generation in which
        the best value improved, and after the last one.

    Returns
    -------
    EvolveResult
        Best point and value over all restarts, and one history record per
        generation.
    """
    gcfg = grade_cfg or GradeConfig()
    ccfg = ceraf_cfg or CerafConfig()
    rng = np.random.default_rng(gcfg.seed)
    n = domain.n
    size = gcfg.pool_rate * n
    evaluate = _Evaluator(objective, vectorized, gcfg.max_fitness_calls)
    zones = _ZoneSet(n)
    semi = 0.5 * ccfg.zone_radius_fraction * domain.width

    def fresh():
        X = domain.random(rng, min(size, evaluate.remaining))
        return X, evaluate(X)

    X, f = fresh()
    k = int(np.argmin(f))
    best_x, best_f = X[k].copy(), float(f[k])
    epoch_x, epoch_best = best_x, best_f
    stagnant = 0
    restarts = 0
    history: list[GenerationRecord] = []
    generation = 0

    while evaluate.remaining > 0:
        generation += 1
        nonfinite_before = evaluate.nonfinite
        pop = X.shape[0]

        # mutation: in-zone members are replaced, others spawn extra mutants
        u = rng.random(pop)
        if zones.count:
            inside = zones.inside(X)
            forced = inside & (u < ccfg.zone_mutation_probability)
            extra = ~inside & (u < gcfg.radioactivity)
        else:
            forced = None
            extra = u < gcfg.radioactivity
        chosen = extra if forced is None else forced | extra
        idx = np.flatnonzero(chosen)[: evaluate.remaining]
        if idx.size:
            M = _mutate_points(X[idx], domain, rng)
            fm = evaluate(M)
            repl = forced[idx] if forced is not None else np.zeros(idx.size, dtype=bool)
            if repl.any():
                X = X.copy()
                f = f.copy()
                X[idx[repl]] = M[repl]
                f[idx[repl]] = fm[repl]
                PX = np.concatenate([X, M[~repl]])
                pf = np.concatenate([f, fm[~repl]])
            else:
                PX = np.concatenate([X, M])
                pf = np.concatenate([f, fm])
        else:
            PX, pf = X, f

        # gradient cross-over
        m = PX.shape[0]
        kids = min(size, evaluate.remaining)
        if kids > 0 and m >= 2:
            qi = rng.integers(m, size=kids)
            ri = rng.integers(m - 1, size=kids)
            ri += ri >= qi
            C = _crossover_points(PX[qi], pf[qi], PX[ri], pf[ri], gcfg.cross_limit, domain, rng)
            fc = evaluate(C)
            zones.register(C, ccfg.radius_decay)
            PX = np.concatenate([PX, C])
            pf = np.concatenate([pf, fc])

        # selection
        keep = _tournament(pf, min(size, PX.shape[0]), rng)
        X, f = PX[keep], pf[keep]

        kbest = int(np.argmin(pf))
        gen_best = float(pf[kbest])
        improved = gen_best < best_f
        if improved:
            best_f = gen_best
            best_x = PX[kbest].copy()
        if epoch_best - gen_best < ccfg.stagnation_epsilon:
            stagnant += 1
        else:
            stagnant = 0
        if gen_best < epoch_best:
            epoch_x, epoch_best = PX[kbest].copy(), gen_best

        rec = GenerationRecord(generation, evaluate.calls, best_f, restarts,
                               evaluate.nonfinite - nonfinite_before)
        history.append(rec)
        reached = gcfg.target_value is not None and best_f <= gcfg.target_value
        if callback is not None and (improved or evaluate.remaining <= 0 or reached):
            callback(rec, best_x)
        if reached:
            break

        if ccfg.enabled and stagnant >= ccfg.stagnation_generations and evaluate.remaining > 0:
            zones.add(epoch_x, semi)
            restarts += 1
            X, f = fresh()
            k = int(np.argmin(f))
            epoch_x, epoch_best = X[k].copy(), float(f[k])
            if epoch_best < best_f:
                best_x, best_f = epoch_x, epoch_best
            stagnant = 0

    if callback is not None and history and history[-1].evaluations != evaluate.calls:
        callback(history[-1], best_x)
    return EvolveResult(best_x, best_f, history, evaluate.calls, restarts, zones.as_list())


class _ZoneSet:
    """All radioactive zones of a run held as stacked arrays."""

    def __init__(self, n):
        self.centers = np.empty((0, n))
        self.semi = np.empty((0, n))
        self.intrusions = np.empty(0, dtype=int)

    @property
    def count(self) -> int:
        return self.centers.shape[0]

    def add(self, center, semi_axes):
        self.centers = np.vstack([self.centers, center])
        self.semi = np.vstack([self.semi, semi_axes])
        self.intrusions = np.append(self.intrusions, 0)

    def _hits(self, P) -> np.ndarray:
        d = (P[:, None, :] - self.centers[None, :, :]) / self.semi[None, :, :]
        return np.einsum("kzn,kzn->kz", d, d) <= 1.0

    def inside(self, P) -> np.ndarray:
        return self._hits(P).any(axis=1)

    def register(self, P, decay):
        if not self.count or P.shape[0] == 0:
            return
        hits = self._hits(P).sum(axis=0)
        if hits.any():
            self.semi = self.semi * (decay ** hits)[:, None]
            self.intrusions = self.intrusions + hits

    def as_list(self) -> list[RadioactiveZone]:
        return [
            RadioactiveZone(c.copy(), s.copy(), int(i))
            for c, s, i in zip(self.centers, self.semi, self.intrusions)
        ]
