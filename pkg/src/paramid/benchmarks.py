"""Test objectives with known minima.

Each function accepts a single point of shape ``(n,)`` and returns a float,
or a batch of shape ``(k, n)`` and returns ``k`` values, so it can be handed
to :func:`paramid.grade.evolve` with or without ``vectorized=True``.
"""
import numpy as np


def _batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def sphere(x):
    X, single = _batch(x)
    f = np.sum(X**2, axis=1)
    return float(f[0]) if single else f


def rosenbrock(x):
    X, single = _batch(x)
    f = np.sum(100.0 * (X[:, 1:] - X[:, :-1] ** 2) ** 2 + (1.0 - X[:, :-1]) ** 2, axis=1)
    return float(f[0]) if single else f


# two-basin deceptive function on [-1, 1]
WIDE_CENTER, WIDE_HALF, WIDE_FLOOR = -0.5, 0.4, 0.1
NARROW_CENTER, NARROW_HALF = 0.9, 0.025
_SLOPE_FLOOR = 0.5
_NARROW_EDGE = _SLOPE_FLOOR + (1.0 - _SLOPE_FLOOR) * NARROW_HALF / 1.9
_NARROW_EXPONENT = 0.25
# distance from the narrow center at which the wall drops to the wide floor
_CORE = NARROW_HALF * (WIDE_FLOOR / _NARROW_EDGE) ** (1.0 / _NARROW_EXPONENT)


def two_basin(x):
    """Deceptive 1-D objective: global minimum 0 at x=0.9, local minimum 0.1 at x=-0.5.

    The wide basin ``|x + 0.5| < 0.4`` is a parabola from 1 down to 0.1 and
    captures almost every population. The narrow basin ``|x - 0.9| < 0.025``
    has a steep power-law wall (exponent 1/4) that only beats 0.1 within
    about 4e-5 of its center, followed by a linear core down to 0. Elsewhere
    the function falls linearly from 1 at x=-1 toward 0.5 at x=0.9, so a
    population barred from the wide basin drifts into the narrow one.
    """
    X, single = _batch(x)
    z = X[:, 0]
    f = _SLOPE_FLOOR + (1.0 - _SLOPE_FLOOR) * np.abs(z - NARROW_CENTER) / 1.9
    wide = np.abs(z - WIDE_CENTER) < WIDE_HALF
    f[wide] = WIDE_FLOOR + (1.0 - WIDE_FLOOR) * ((z[wide] - WIDE_CENTER) / WIDE_HALF) ** 2
    d = np.abs(z - NARROW_CENTER)
    narrow = d < NARROW_HALF
    dn = d[narrow]
    f[narrow] = np.where(
        dn < _CORE,
        WIDE_FLOOR * dn / _CORE,
        _NARROW_EDGE * (dn / NARROW_HALF) ** _NARROW_EXPONENT,
    )
    return float(f[0]) if single else f


class CoupledQuadraticModel:
    """Forward model ``stress = p * strain + q * strain**2`` for coupled-pair tests.

    With the stress read at two strains, ``p`` is an affine function of
    ``q`` and the first stress, and ``q`` an affine function of ``p`` and
    the second stress, so each parameter can only be identified given the
    other.
    """

    def __init__(self, p_bounds=(10.0, 30.0), q_bounds=(0.0, 2000.0), stop=0.01, step=1e-4):
        from .core import ParameterSpace
        from .models import strain_grid

        self.space = ParameterSpace.from_bounds({"p": p_bounds, "q": q_bounds})
        self.grid = strain_grid(stop, step)

    def __call__(self, point):
        from .core import ResponseCurve

        p, q = float(point["p"]), float(point["q"])
        return ResponseCurve(self.grid, p * self.grid + q * self.grid**2, {"model": "coupled-quadratic"})
