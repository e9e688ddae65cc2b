import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import pearson_two_pass
from paramid.benchmarks import CoupledQuadraticModel
from paramid.core import ParameterSpace, ResponseCurve
from paramid.doe import lhs_sample
from paramid.errors import InsufficientDataError, ShapeError, UndefinedCorrelationError
from paramid.models import run_batch
from paramid.stats import (
    CurveBundle,
    PeakSensitivity,
    format_peak_table,
    load_bundle,
    peak_sensitivity,
    pearson,
    save_bundle,
    sensitivity_evolution,
    write_peak_table,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


class TestPearson:
    def test_perfect_and_anti(self):
        x = [1.0, 2.0, 3.0, 4.0]
        assert pearson(x, [2.0, 4.0, 6.0, 8.0]) == 1.0
        assert pearson(x, [8.0, 6.0, 4.0, 2.0]) == -1.0

    def test_small_example(self):
        assert pearson([1, 2, 3, 4, 5], [2, 1, 4, 3, 5]) == pytest.approx(0.8, abs=1e-15)

    def test_constant_input_is_undefined(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson([1, 1, 1], [1, 2, 3])

    def test_shape_checks(self):
        with pytest.raises(ShapeError):
            pearson([1, 2], [1, 2, 3])
        with pytest.raises(ShapeError):
            pearson([1], [1])

    @given(st.lists(st.tuples(finite, finite), min_size=3, max_size=40))
    def test_agrees_with_oracle_and_is_symmetric(self, pairs):
        x, y = map(list, zip(*pairs))
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            return
        try:
            expected = pearson_two_pass(x, y)
        except ZeroDivisionError:
            return
        r = pearson(x, y)
        assert -1.0 <= r <= 1.0
        assert r == pytest.approx(expected, abs=1e-9)
        assert pearson(y, x) == pytest.approx(r, abs=1e-15)

    @given(seed=st.integers(0, 5000), a=st.floats(0.1, 100), b=st.floats(-100, 100), c=st.floats(0.1, 100))
    def test_affine_invariance(self, seed, a, b, c):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=20), rng.normal(size=20)
        assert pearson(a * x + b, c * y - b) == pytest.approx(pearson(x, y), abs=1e-12)


def linear_bundle(n=20, seed=0):
    sp = ParameterSpace.from_bounds({"p": (1.0, 3.0), "z": (0.0, 1.0)})
    des = lhs_sample(sp, n, seed)
    grid = np.linspace(0, 1, 11)
    curves = [ResponseCurve(grid, des.rows[i, 0] * grid) for i in range(n)]
    return CurveBundle(des, curves)


class TestSensitivity:
    def test_slope_parameter_is_fully_correlated(self):
        b = linear_bundle()
        tr = sensitivity_evolution(b, np.linspace(0.1, 1.0, 10))
        np.testing.assert_allclose(tr.coefficients["p"], 1.0, atol=1e-12)
        z = pearson(b.design.column("z"), b.design.column("p"))
        np.testing.assert_allclose(tr.coefficients["z"], z, atol=1e-12)

    def test_constant_stress_gives_zero(self):
        # every curve passes through the origin
        tr = sensitivity_evolution(linear_bundle(), [0.0, 0.5])
        assert tr.coefficients["p"][0] == 0.0
        assert tr.coefficients["p"][1] == pytest.approx(1.0)

    def test_failed_rows_are_masked_out(self):
        b = linear_bundle(12)
        dropped = [None if i in (2, 7) else c for i, c in enumerate(b.curves)]
        masked = CurveBundle(b.design, dropped)
        kept = CurveBundle(b.design.take([i for i in range(12) if i not in (2, 7)]),
                           [c for c in dropped if c is not None])
        grid = np.linspace(0.1, 1, 5)
        got = sensitivity_evolution(masked, grid).coefficients
        ref = sensitivity_evolution(kept, grid).coefficients
        for k in got:
            np.testing.assert_array_equal(got[k], ref[k])
        assert masked.n_valid == 10

    def test_needs_two_valid_curves(self):
        b = linear_bundle(3)
        lone = CurveBundle(b.design, [b.curves[0], None, None])
        with pytest.raises(InsufficientDataError):
            sensitivity_evolution(lone, [0.5])
        with pytest.raises(InsufficientDataError):
            peak_sensitivity(lone)

    def test_coupled_model_signs(self):
        m = CoupledQuadraticModel()
        b = run_batch(m, lhs_sample(m.space, 30, 1), workers=1)
        tr = sensitivity_evolution(b, [0.0001, 0.01])
        # p dominates at small strain, q at the end of the curve
        assert tr.coefficients["p"][0] > 0.9
        assert tr.coefficients["q"][1] > tr.coefficients["p"][1]

    def test_trace_csv(self, tmp_path):
        tr = sensitivity_evolution(linear_bundle(), [0.5, 1.0])
        tr.write_csv(tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "strain,p,z"
        assert len(lines) == 3


class TestPeakTable:
    def test_peaks_of_linear_bundle(self):
        rows = peak_sensitivity(linear_bundle())
        by = {r.parameter: r for r in rows}
        assert by["p"].r_peak_stress == pytest.approx(1.0)
        # every curve peaks at the last strain
        assert by["p"].r_peak_strain == 0.0

    def test_published_layout(self):
        # [PAPER] two rows of a published peak-sensitivity table, used as a format fixture
        rows = [PeakSensitivity("k1", 0.968, 0.709), PeakSensitivity("E", 0.004, 0.684)]
        text = format_peak_table(rows)
        assert text.splitlines() == [
            "Parameter      eps    sigma",
            "k1           0.968    0.709",
            "E            0.004    0.684",
        ]

    def test_csv(self, tmp_path):
        write_peak_table([PeakSensitivity("k1", 0.968, 0.709)], tmp_path / "p.csv")
        assert (tmp_path / "p.csv").read_text() == "parameter,r_peak_strain,r_peak_stress\nk1,0.968,0.709\n"


class TestBundleFiles:
    def test_round_trip_keeps_mask_and_failures(self, tmp_path):
        b = linear_bundle(6)
        curves = list(b.curves)
        curves[4] = None
        b2 = CurveBundle(b.design, curves, failures={4: {"kind": "exit-code", "message": "boom"}}, fixed={"nu": 0.2})
        save_bundle(b2, tmp_path / "b", model={"kind": "test"})
        back = load_bundle(tmp_path / "b")
        assert back.valid_mask.tolist() == [True] * 4 + [False, True]
        assert back.failures == {4: {"kind": "exit-code", "message": "boom"}}
        assert back.fixed == {"nu": 0.2}
        assert back.curves[5] == b.curves[5]
        assert back.curves[5].meta["row"] == 5
        assert back.point(0) == {"nu": 0.2, **b.design.point(0)}

    def test_valid_row_needs_curve(self):
        b = linear_bundle(2)
        with pytest.raises(ShapeError):
            CurveBundle(b.design, [b.curves[0], None], valid_mask=[True, True])
