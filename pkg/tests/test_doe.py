import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import lhs_ok, pearson_two_pass
from paramid import data_path
from paramid.core import ParameterSpace, load_space
from paramid.doe import (
    AnnealConfig,
    DesignMatrix,
    correlation_matrix,
    decorrelate,
    design_objective,
    has_lhs_property,
    lhs_sample,
    read_design_csv,
    stratum_counts,
    write_design_csv,
)
from paramid.errors import ConfigError, DataError, ShapeError


def unit_space(d):
    return ParameterSpace.from_bounds({f"x{k}": (0.0, 1.0) for k in range(d)})


class TestLhs:
    @given(n=st.integers(1, 60), d=st.integers(1, 6), seed=st.integers(0, 2**31), jitter=st.booleans())
    def test_one_sample_per_stratum(self, n, d, seed, jitter):
        sp = ParameterSpace.from_bounds({f"x{k}": (-k - 1.0, 2.0 * k + 3.0) for k in range(d)})
        des = lhs_sample(sp, n, seed, jitter)
        assert des.rows.shape == (n, d)
        assert has_lhs_property(des)
        for k, p in enumerate(sp):
            assert lhs_ok(des.rows[:, k].tolist(), p.lower, p.upper)

    def test_single_sample_is_the_midpoint(self):
        sp = load_space(data_path("surrogate_space.json"))
        des = lhs_sample(sp, 1, seed=0)
        np.testing.assert_allclose(des.rows[0], [40.0, 0.0025, 4.0])

    def test_midpoints_without_jitter(self):
        des = lhs_sample(unit_space(2), 4, seed=1)
        for k in range(2):
            np.testing.assert_allclose(np.sort(des.rows[:, k]), [0.125, 0.375, 0.625, 0.875])

    def test_seeded(self):
        a = lhs_sample(unit_space(3), 10, seed=5)
        b = lhs_sample(unit_space(3), 10, seed=5)
        c = lhs_sample(unit_space(3), 10, seed=6)
        assert np.array_equal(a.rows, b.rows)
        assert not np.array_equal(a.rows, c.rows)

    def test_rejects_empty_design(self):
        with pytest.raises(ConfigError):
            lhs_sample(unit_space(2), 0, seed=0)

    def test_stratum_counts_detect_violation(self):
        des = DesignMatrix(unit_space(1), [[0.1], [0.2], [0.9]])
        assert not has_lhs_property(des)
        assert stratum_counts(des)[:, 0].tolist() == [2, 0, 1]


class TestDesignMatrix:
    def test_bounds_enforced(self):
        with pytest.raises(DataError):
            DesignMatrix(unit_space(1), [[1.5]])

    def test_shape_enforced(self):
        with pytest.raises(ShapeError):
            DesignMatrix(unit_space(2), [[0.5]])

    def test_csv_round_trip(self, tmp_path):
        des = lhs_sample(unit_space(3), 7, seed=2, jitter=True)
        write_design_csv(des, tmp_path / "d.csv")
        back = read_design_csv(tmp_path / "d.csv")
        assert np.array_equal(back.rows, des.rows)
        assert back.space == des.space
        meta = json.loads((tmp_path / "d.csv.meta.json").read_text())
        assert meta["seed"] == 2


class TestCorrelation:
    @given(seed=st.integers(0, 10_000), n=st.integers(3, 40), d=st.integers(2, 5))
    def test_matches_pairwise_oracle(self, seed, n, d):
        X = np.random.default_rng(seed).normal(size=(n, d))
        C = correlation_matrix(X)
        for i in range(d):
            assert C[i, i] == 1.0
            for j in range(d):
                if i != j:
                    assert C[i, j] == pytest.approx(pearson_two_pass(X[:, i].tolist(), X[:, j].tolist()), abs=1e-13)
        assert np.array_equal(C, C.T)

    def test_objective_kinds(self):
        X = np.array([[0.0, 0.0, 1.0], [1.0, 1.0, 0.0], [2.0, 3.0, 1.0]])
        C = correlation_matrix(X)
        des = DesignMatrix(ParameterSpace.from_bounds({"a": (0, 3), "b": (0, 3), "c": (0, 3)}), X)
        off = C[~np.eye(3, dtype=bool)]
        assert design_objective(des) == pytest.approx(np.abs(off).max())
        assert design_objective(des, "frobenius_offdiag") == pytest.approx(np.sqrt(0.5 * np.sum(off**2)))


class TestDecorrelate:
    @given(seed=st.integers(0, 1000), n=st.integers(3, 25), d=st.integers(2, 5))
    def test_preserves_column_multisets(self, seed, n, d):
        des = lhs_sample(unit_space(d), n, seed, jitter=True)
        out = decorrelate(des, AnnealConfig(sweeps=3), seed=seed)
        for k in range(d):
            assert np.array_equal(np.sort(out.rows[:, k]), np.sort(des.rows[:, k]))
        assert design_objective(out) <= design_objective(des)

    def test_reduces_correlation_on_the_bounds_table(self):
        sp = load_space(data_path("table1.json"))
        des = lhs_sample(sp, 30, seed=0)
        out = decorrelate(des, seed=0)
        assert design_objective(out) < 0.05 < design_objective(des)
        assert has_lhs_property(out)

    def test_deterministic(self):
        des = lhs_sample(unit_space(4), 20, seed=3)
        a = decorrelate(des, AnnealConfig(sweeps=20), seed=9)
        b = decorrelate(des, AnnealConfig(sweeps=20), seed=9)
        assert np.array_equal(a.rows, b.rows)

    def test_tiny_designs_pass_through(self):
        des = lhs_sample(unit_space(3), 2, seed=0)
        assert decorrelate(des) is des

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            AnnealConfig(cooling_factor=1.0)
        with pytest.raises(ConfigError):
            AnnealConfig(sweeps=0)
        with pytest.raises(ConfigError):
            AnnealConfig(objective="det")
