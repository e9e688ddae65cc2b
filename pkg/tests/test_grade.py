import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from paramid import grade
from paramid.benchmarks import rosenbrock, sphere, two_basin
from paramid.errors import ConfigError
from paramid.grade import (
    CerafConfig,
    Chromosome,
    Domain,
    GradeConfig,
    RadioactiveZone,
    crossover,
    evolve,
    mutate,
    select,
)


class ConstantRng:
    """Stands in for a generator whose uniform draws are all ``u``."""

    def __init__(self, u):
        self.u = u

    def random(self, shape=None):
        return self.u if shape is None else np.full(shape, self.u)


BOX = Domain(np.array([[-1.0, 1.0], [0.0, 4.0]]))


class TestDomain:
    def test_rejects_bad_bounds(self):
        with pytest.raises(ConfigError):
            Domain([[1.0, 0.0]])
        with pytest.raises(ConfigError):
            Domain([[0.0, np.inf]])

    def test_random_points_inside(self):
        P = BOX.random(np.random.default_rng(0), 500)
        assert all(BOX.contains(p) for p in P)


class TestMutation:
    def test_zero_rate_keeps_parent(self):
        child = mutate(Chromosome(np.array([0.5, 1.0]), 3.0), BOX, ConstantRng(0.0))
        assert child.x.tolist() == [0.5, 1.0]
        assert child.fitness == np.inf

    def test_unit_rate_jumps_to_random_point(self):
        # RP = lower + 1 * width = upper, MR = 1
        child = mutate(Chromosome(np.array([0.5, 1.0])), BOX, ConstantRng(1.0))
        assert child.x.tolist() == [1.0, 4.0]

    @given(seed=st.integers(0, 10_000))
    def test_stays_in_domain(self, seed):
        rng = np.random.default_rng(seed)
        x = BOX.random(rng)
        assert BOX.contains(mutate(Chromosome(x), BOX, rng).x)


class TestCrossover:
    def test_steps_past_the_better_parent(self):
        q = Chromosome(np.array([0.0, 0.0]), 1.0)
        r = Chromosome(np.array([1.0, 1.0]), 2.0)
        child = crossover(q, r, GradeConfig(cross_limit=1.0), ConstantRng(0.5))
        assert child.x.tolist() == [-0.5, -0.5]

    def test_order_of_parents_does_not_matter(self):
        q = Chromosome(np.array([0.0, 0.0]), 1.0)
        r = Chromosome(np.array([1.0, 1.0]), 2.0)
        a = crossover(q, r, GradeConfig(), ConstantRng(0.5))
        b = crossover(r, q, GradeConfig(), ConstantRng(0.5))
        assert a.x.tolist() == b.x.tolist()

    def test_cross_limit_scales_step(self):
        # CR = u * CL = 1.0 * 2.0
        q = Chromosome(np.array([0.0, 0.0]), 1.0)
        r = Chromosome(np.array([1.0, 1.0]), 2.0)
        child = crossover(q, r, GradeConfig(cross_limit=2.0), ConstantRng(1.0))
        assert child.x.tolist() == [-2.0, -2.0]

    def test_clipped_to_domain(self):
        q = Chromosome(np.array([-0.9, 0.5]), 1.0)
        r = Chromosome(np.array([0.9, 3.5]), 2.0)
        child = crossover(q, r, GradeConfig(cross_limit=1.0), ConstantRng(1.0), BOX)
        assert child.x.tolist() == [-1.0, 0.0]


class TestSelection:
    def test_best_always_survives(self):
        rng = np.random.default_rng(0)
        pop = [Chromosome(np.array([i]), float(f)) for i, f in enumerate([5, 1, 3, 2, 4, 6])]
        for _ in range(200):
            kept = select(pop, 3, rng)
            assert len(kept) == 3
            assert min(c.fitness for c in kept) == 1.0

    def test_survival_rates(self):
        # three members, one tournament: the middle one loses only when paired with the best
        rng = np.random.default_rng(1)
        pop = [Chromosome(np.array([0.0]), 1.0), Chromosome(np.array([1.0]), 2.0), Chromosome(np.array([2.0]), 3.0)]
        trials = 20_000
        worst_kept = sum(any(c.fitness == 3.0 for c in select(pop, 2, rng)) for _ in range(trials))
        assert worst_kept / trials == pytest.approx(1 / 3, abs=0.015)

    def test_nonfinite_rank_worst(self):
        pop = [Chromosome(np.array([0.0]), np.nan), Chromosome(np.array([1.0]), 7.0)]
        kept = select(pop, 1, np.random.default_rng(0))
        assert kept[0].fitness == 7.0

    def test_target_too_large(self):
        with pytest.raises(ValueError):
            select([Chromosome(np.array([0.0]), 1.0)], 2, np.random.default_rng(0))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            GradeConfig(pool_rate=1)
        with pytest.raises(ConfigError):
            GradeConfig(radioactivity=1.5)
        with pytest.raises(ConfigError):
            CerafConfig(radius_decay=1.0)
        with pytest.raises(ConfigError):
            CerafConfig(zone_radius_fraction=0.0)


class TestZone:
    def test_membership_and_decay(self):
        z = RadioactiveZone(np.array([0.0, 0.0]), np.array([1.0, 2.0]))
        assert z.contains([0.9, 0.0])
        assert not z.contains([0.0, 2.1])
        z.decay(0.5, 2)
        assert z.semi_axes.tolist() == [0.25, 0.5]
        assert z.intrusions == 2


class TestEvolve:
    def test_sphere_converges(self):
        res = evolve(sphere, Domain.box(-5, 5, 3), GradeConfig(max_fitness_calls=30_000, seed=1), vectorized=True)
        assert res.value < 1e-6
        assert sphere(res.x) == res.value

    def test_budget_is_exact(self):
        res = evolve(sphere, Domain.box(-5, 5, 2), GradeConfig(max_fitness_calls=1234, seed=0), vectorized=True)
        assert res.evaluations == 1234
        assert res.history[-1].evaluations == 1234

    def test_target_value_stops_early(self):
        cfg = GradeConfig(max_fitness_calls=100_000, seed=0, target_value=1e-2)
        res = evolve(sphere, Domain.box(-5, 5, 2), cfg, vectorized=True)
        assert res.value <= 1e-2
        assert res.evaluations < 100_000

    def test_best_value_never_increases(self):
        res = evolve(rosenbrock, Domain.box(-2.048, 2.048, 2), GradeConfig(max_fitness_calls=20_000, seed=3),
                     vectorized=True)
        best = [r.best_value for r in res.history]
        assert all(b <= a for a, b in zip(best, best[1:]))
        assert res.value == best[-1]

    def test_results_in_domain(self):
        dom = Domain(np.array([[2.0, 3.0], [-3.0, -2.0]]))
        res = evolve(sphere, dom, GradeConfig(max_fitness_calls=5_000, seed=0), vectorized=True)
        assert dom.contains(res.x)
        assert res.x == pytest.approx([2.0, -2.0])

    def test_deterministic(self):
        cfg = GradeConfig(max_fitness_calls=10_000, seed=42)
        a = evolve(two_basin, Domain.box(-1, 1, 1), cfg, vectorized=True)
        b = evolve(two_basin, Domain.box(-1, 1, 1), cfg, vectorized=True)
        assert a.value == b.value and np.array_equal(a.x, b.x)
        assert a.history == b.history

    def test_scalar_and_vectorized_agree(self):
        cfg = GradeConfig(max_fitness_calls=3_000, seed=5)
        a = evolve(sphere, Domain.box(-5, 5, 2), cfg, CerafConfig(enabled=False), vectorized=True)
        b = evolve(sphere, Domain.box(-5, 5, 2), cfg, CerafConfig(enabled=False))
        assert a.value == b.value

    def test_nonfinite_objective_values(self):
        def f(x):
            return np.nan if x[0] < 0 else float(np.sum(x**2))

        res = evolve(f, Domain.box(-1, 1, 2), GradeConfig(max_fitness_calls=4_000, seed=0))
        assert np.isfinite(res.value)
        assert res.x[0] >= 0
        assert sum(r.nonfinite for r in res.history) > 0

    def test_no_mutation_without_radioactivity(self, monkeypatch):
        def forbidden(*a, **k):
            raise AssertionError("mutation operator called")

        monkeypatch.setattr(grade, "_mutate_points", forbidden)
        res = evolve(sphere, Domain.box(-5, 5, 2), GradeConfig(radioactivity=0.0, max_fitness_calls=2_000),
                     CerafConfig(enabled=False), vectorized=True)
        assert res.restarts == 0

    def test_zones_shrink_by_intrusions(self):
        ccfg = CerafConfig(stagnation_generations=5)
        res = evolve(two_basin, Domain.box(-1, 1, 1), GradeConfig(max_fitness_calls=20_000, seed=2), ccfg,
                     vectorized=True)
        assert res.restarts >= 1 and res.zones
        for z in res.zones:
            # half of 75% of the interval width 2, shrunk once per intrusion
            assert z.semi_axes[0] == pytest.approx(0.75 * 0.997**z.intrusions, rel=1e-12)
        assert any(z.intrusions > 0 for z in res.zones)

    def test_callback_sees_improvements(self):
        seen = []
        evolve(sphere, Domain.box(-5, 5, 2), GradeConfig(max_fitness_calls=2_000, seed=0),
               vectorized=True, callback=lambda rec, x: seen.append((rec.best_value, sphere(x))))
        assert seen
        for value, recomputed in seen:
            assert value == recomputed
        assert [v for v, _ in seen] == sorted((v for v, _ in seen), reverse=True)

    def test_history_csv(self, tmp_path):
        res = evolve(sphere, Domain.box(-5, 5, 2), GradeConfig(max_fitness_calls=500, seed=0), vectorized=True)
        res.write_history(tmp_path / "h.csv")
        rows = list(csv.reader(open(tmp_path / "h.csv")))
        assert rows[0] == ["generation", "evaluations", "best_value", "restarts"]
        assert len(rows) == len(res.history) + 1
        assert float(rows[-1][2]) == res.value
