import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import interpolate
from paramid import data_path
from paramid.core import (
    CurveFeature,
    NormalizationRule,
    Parameter,
    ParameterSpace,
    ResponseCurve,
    denormalize,
    extract_feature,
    extract_features,
    extract_peak,
    extract_yield,
    load_space,
    normalize,
    read_curve_csv,
    save_space,
    stress_at_strain,
    write_curve_csv,
)
from paramid.errors import (
    ConfigError,
    DataError,
    DegenerateCurveError,
    ExtrapolationError,
    InvalidRuleError,
    ShapeError,
)


def bilinear_curve():
    # elastic slope 1e4 up to 0.004, then flat at 40
    e = np.arange(0, 101) * 1e-4
    s = np.minimum(1e4 * e, 40.0)
    return ResponseCurve(e, s)


# --------------------------------------------------------------------------
# parameter spaces
# --------------------------------------------------------------------------


class TestParameterSpace:
    def test_rejects_inverted_bounds(self):
        with pytest.raises(ConfigError):
            Parameter("a", 2.0, 1.0)
        with pytest.raises(ConfigError):
            Parameter("a", 1.0, 1.0)

    def test_rejects_duplicate_names(self):
        with pytest.raises(ConfigError):
            ParameterSpace((Parameter("a", 0, 1), Parameter("a", 0, 2)))

    def test_subspace_and_without_keep_order(self):
        sp = ParameterSpace.from_bounds({"a": (0, 1), "b": (0, 2), "c": (0, 3)})
        assert sp.subspace(["c", "a"]).names == ["c", "a"]
        assert sp.without(["b"]).names == ["a", "c"]
        assert sp.index("c") == 2

    def test_json_round_trip(self, tmp_path):
        sp = ParameterSpace.from_bounds({"a": (0, 1), "b": (-2, 2)})
        save_space(sp, tmp_path / "s.json")
        assert load_space(tmp_path / "s.json") == sp

    def test_shipped_bounds_table(self):
        # [PAPER] microplane bounds, E stored in MPa
        sp = load_space(data_path("table1.json"))
        expected = {
            "E": (20000.0, 50000.0),
            "nu": (0.1, 0.3),
            "k1": (0.00008, 0.00025),
            "k2": (100.0, 1000.0),
            "k3": (5.0, 15.0),
            "k4": (30.0, 200.0),
            "c3": (3.0, 5.0),
            "c20": (0.2, 5.0),
        }
        assert sp.names == list(expected)
        for name, (lo, hi) in expected.items():
            assert (sp[name].lower, sp[name].upper) == (lo, hi)


# --------------------------------------------------------------------------
# normalization
# --------------------------------------------------------------------------


class TestNormalization:
    rule = NormalizationRule((0.0, 20.0))

    def test_lower_bound_maps_to_target_lower(self):
        assert normalize(0.0, self.rule) == pytest.approx(0.15, abs=1e-15)

    def test_midpoint_maps_to_half(self):
        assert normalize(10.0, self.rule) == pytest.approx(0.5, abs=1e-15)

    def test_not_clamped(self):
        # 1.5 intervals above the lower bound: 0.15 + 1.5 * 0.7
        assert normalize(30.0, self.rule) == pytest.approx(1.2, abs=1e-12)

    def test_degenerate_intervals_rejected(self):
        with pytest.raises(InvalidRuleError):
            NormalizationRule((1.0, 1.0))
        with pytest.raises(InvalidRuleError):
            NormalizationRule((0.0, 1.0), (0.5, 0.5))
        with pytest.raises(InvalidRuleError):
            NormalizationRule((0.0, math.inf))

    def test_array_input(self):
        out = normalize(np.array([0.0, 20.0]), self.rule)
        np.testing.assert_allclose(out, [0.15, 0.85], atol=1e-15)

    @given(
        lo=st.floats(-1e6, 1e6),
        width=st.floats(1e-3, 1e6),
        u=st.floats(-2, 3),
    )
    def test_round_trip(self, lo, width, u):
        rule = NormalizationRule((lo, lo + width))
        v = lo + u * width
        back = denormalize(normalize(v, rule), rule)
        assert back == pytest.approx(v, rel=1e-9, abs=1e-9 * (abs(lo) + width))

    def test_rule_from_space(self):
        sp = ParameterSpace.from_bounds({"a": (2.0, 4.0)})
        assert sp.rule("a").source_interval == (2.0, 4.0)
        assert sp.rule("a").target_interval == (0.15, 0.85)


# --------------------------------------------------------------------------
# curves
# --------------------------------------------------------------------------


class TestResponseCurve:
    def test_rejects_nonincreasing_strain(self):
        with pytest.raises(DataError):
            ResponseCurve([0.0, 0.1, 0.1], [0, 1, 2])

    def test_rejects_mismatched_shapes(self):
        with pytest.raises(ShapeError):
            ResponseCurve([0.0, 0.1], [0, 1, 2])

    def test_rejects_nonfinite(self):
        with pytest.raises(DataError):
            ResponseCurve([0.0, 0.1], [0, math.nan])

    def test_arrays_are_read_only(self):
        c = bilinear_curve()
        with pytest.raises(ValueError):
            c.stress[0] = 1.0

    def test_csv_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        c = ResponseCurve(np.cumsum(rng.random(50)), rng.normal(size=50))
        write_curve_csv(c, tmp_path / "c.csv")
        assert read_curve_csv(tmp_path / "c.csv") == c

    def test_csv_bad_header(self, tmp_path):
        (tmp_path / "c.csv").write_text("x,y\n0,1\n1,2\n")
        with pytest.raises(DataError):
            read_curve_csv(tmp_path / "c.csv")

    def test_csv_bad_value(self, tmp_path):
        (tmp_path / "c.csv").write_text("strain,stress\n0,1\n1,abc\n")
        with pytest.raises(DataError, match=":3"):
            read_curve_csv(tmp_path / "c.csv")


class TestPeak:
    def test_first_maximum_on_ties(self):
        c = ResponseCurve([0, 1, 2, 3], [0, 5, 5, 1])
        assert extract_peak(c) == (1.0, 5.0)

    def test_bilinear_plateau_starts_at_kink(self):
        assert extract_peak(bilinear_curve()) == (pytest.approx(0.004), 40.0)

    @given(
        stress=st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40),
        scale=st.floats(1e-3, 1e3),
    )
    def test_invariant_under_positive_scaling(self, stress, scale):
        c = ResponseCurve(np.arange(len(stress)), stress)
        k = int(np.argmax(c.stress))
        assert extract_peak(c).strain == float(k)
        scaled = ResponseCurve(c.strain, c.stress * scale)
        # scaling can merge near-ties, never move the peak to a lower value
        ks = int(extract_peak(scaled).strain)
        assert c.stress[ks] * scale == pytest.approx(scaled.stress.max())


class TestYield:
    def test_bilinear_yields_just_past_kink(self):
        y = extract_yield(bilinear_curve())
        assert y.yielded
        # the secant first drops below 95% of the initial modulus at 0.0043
        assert y.strain == pytest.approx(0.0043)
        assert y.stress == 40.0

    def test_linear_curve_never_yields(self):
        e = np.linspace(0, 0.01, 11)
        y = extract_yield(ResponseCurve(e, 3.0 * e))
        assert not y.yielded
        assert y.strain == pytest.approx(0.01)

    def test_zero_curve_is_degenerate(self):
        with pytest.raises(DegenerateCurveError):
            extract_yield(ResponseCurve([0, 1, 2], [0, 0, 0]))

    def test_tolerance_range(self):
        with pytest.raises(ConfigError):
            extract_yield(bilinear_curve(), 1.5)


class TestInterpolation:
    xs = [0.0, 1.0, 2.0, 4.0]
    ys = [0.0, 10.0, 5.0, 9.0]

    def test_exact_on_grid_points(self):
        c = ResponseCurve(self.xs, self.ys)
        for x, y in zip(self.xs, self.ys):
            assert stress_at_strain(c, x) == y

    def test_between_points(self):
        c = ResponseCurve(self.xs, self.ys)
        assert stress_at_strain(c, 3.0) == 7.0
        assert stress_at_strain(c, 0.25) == 2.5

    def test_extrapolation_raises(self):
        c = ResponseCurve(self.xs, self.ys)
        with pytest.raises(ExtrapolationError):
            stress_at_strain(c, 4.5)
        with pytest.raises(ExtrapolationError):
            stress_at_strain(c, [-0.1, 1.0])

    @given(
        steps=st.lists(st.floats(1e-3, 10), min_size=1, max_size=30),
        data=st.data(),
    )
    def test_agrees_with_bisection_oracle(self, steps, data):
        xs = np.concatenate([[0.0], np.cumsum(steps)])
        ys = data.draw(st.lists(st.floats(-100, 100), min_size=xs.size, max_size=xs.size))
        c = ResponseCurve(xs, ys)
        q = data.draw(st.floats(0.0, float(c.strain[-1])))
        expected = interpolate(c.strain.tolist(), c.stress.tolist(), q)
        assert stress_at_strain(c, q) == pytest.approx(expected, rel=1e-12, abs=1e-9)

    @given(st.integers(1, 5))
    def test_refining_a_linear_curve_changes_nothing(self, k):
        e = np.linspace(0, 1, 11)
        coarse = ResponseCurve(e, 2 * e + 1)
        fine_e = np.linspace(0, 1, 10 * k + 1)
        fine = ResponseCurve(fine_e, 2 * fine_e + 1)
        q = np.linspace(0, 1, 37)
        np.testing.assert_allclose(stress_at_strain(coarse, q), stress_at_strain(fine, q), atol=1e-12)


class TestFeatures:
    def test_kinds(self):
        c = bilinear_curve()
        known = {"E": 3.0}
        assert extract_feature(c, CurveFeature("stress_at_index", 2)) == pytest.approx(2.0)
        assert extract_feature(c, CurveFeature("stress_at_strain", 0.00025)) == pytest.approx(2.5)
        assert extract_feature(c, CurveFeature("peak_stress")) == 40.0
        assert extract_feature(c, CurveFeature("peak_strain")) == pytest.approx(0.004)
        assert extract_feature(c, CurveFeature("yield_strain")) == pytest.approx(0.0043)
        assert extract_feature(c, CurveFeature("yield_stress")) == 40.0
        assert extract_feature(c, CurveFeature("known_parameter", "E"), known) == 3.0

    def test_bad_arguments_rejected(self):
        with pytest.raises(ConfigError):
            CurveFeature("peak_stress", 3)
        with pytest.raises(ConfigError):
            CurveFeature("stress_at_index", 0.5)
        with pytest.raises(ConfigError):
            CurveFeature("curvature")

    def test_missing_known_parameter(self):
        with pytest.raises(DataError):
            extract_feature(bilinear_curve(), CurveFeature("known_parameter", "nu"), {})

    def test_index_out_of_range(self):
        with pytest.raises(DataError):
            extract_feature(bilinear_curve(), CurveFeature("stress_at_index", 500))

    def test_named_curves(self):
        a = bilinear_curve()
        b = ResponseCurve(a.strain, 2 * a.stress)
        feats = [CurveFeature("peak_stress"), CurveFeature("peak_stress", curve="lateral")]
        np.testing.assert_array_equal(extract_features({"default": a, "lateral": b}, feats), [40.0, 80.0])

    def test_dict_round_trip(self):
        for f in (CurveFeature("stress_at_strain", 0.002), CurveFeature("peak_stress", curve="x"),
                  CurveFeature("known_parameter", "E")):
            assert CurveFeature.from_dict(json.loads(json.dumps(f.to_dict()))) == f
        # integer strains written by hand still parse as strains
        assert CurveFeature.from_dict({"kind": "stress_at_strain", "argument": 1}).argument == 1.0
