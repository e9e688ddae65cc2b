"""
Escaping a deceptive basin with radioactive restart zones
=========================================================

A one-dimensional objective with a wide, shallow basin at -0.5 and a very
narrow, deeper one at 0.9. A plain real-coded genetic search converges into
the wide basin and stays there; marking stagnation points as "radioactive"
and restarting the population away from them finds the narrow one.
"""

import numpy as np

from paramid.benchmarks import rosenbrock, two_basin
from paramid.grade import CerafConfig, Domain, GradeConfig, evolve

xs = np.linspace(-1, 1, 9)
print("objective on a coarse grid:", np.round(two_basin(xs[:, None]), 3))

###############################################################################
# Ten seeds, with and without zones
# ---------------------------------
domain = Domain.box(-1.0, 1.0, 1)
for enabled in (False, True):
    found = []
    for seed in range(10):
        res = evolve(two_basin, domain, GradeConfig(seed=seed, max_fitness_calls=50_000, target_value=1e-3),
                     CerafConfig(enabled=enabled), vectorized=True)
        found.append((res.x[0], res.value, res.restarts))
    hits = sum(v < 1e-3 for _, v, _ in found)
    print(f"zones {'on ' if enabled else 'off'}: {hits}/10 reach the narrow basin")
    for x, v, r in found[:3]:
        print(f"    x = {x:+.5f}  f = {v:.2e}  restarts = {r}")

###############################################################################
# Where the zones ended up
# ------------------------
# Each zone is centred on a point where the search stalled. Its semi-axis
# starts at 3/8 of the interval and shrinks slightly every time a cross-over
# child lands inside.
res = evolve(two_basin, domain, GradeConfig(seed=4, max_fitness_calls=50_000, target_value=1e-3),
             CerafConfig(), vectorized=True)
for z in res.zones:
    print(f"zone at {z.center[0]:+.4f}, semi-axis {z.semi_axes[0]:.4f}, {z.intrusions} intrusions")

###############################################################################
# A smooth but curved valley
# --------------------------
# The history is one row per generation; print the improvements only.
last = np.inf


def show(record, best_x):
    global last
    if record.best_value < 0.1 * last:
        print(f"  gen {record.generation:5d}  calls {record.evaluations:6d}  best {record.best_value:.3e}")
        last = record.best_value


res = evolve(rosenbrock, Domain.box(-2.048, 2.048, 2), GradeConfig(seed=0, max_fitness_calls=40_000),
             vectorized=True, callback=show)
print("Rosenbrock minimum near", np.round(res.x, 4))
