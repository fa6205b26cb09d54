"""Grid, parameter, field, and trajectory container behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdeblocks import (
    BoundaryValues,
    Field1D,
    Grid1D,
    ParamVector,
    Trajectory,
    boundary_pair,
    make_grid,
)


class TestGrid1D:
    def test_nodes_and_spacing(self):
        g = make_grid(8, 2.0)
        assert g.dx == 0.25
        np.testing.assert_allclose(g.x, 0.25 * np.arange(8))
        assert g.x[0] == 0.0
        assert g.x[-1] == g.length - g.dx  # periodic: no node at x = L

    @pytest.mark.parametrize("nx", [7, 9, 0, -8, 6])
    def test_rejects_bad_nx(self, nx):
        with pytest.raises(ValueError):
            make_grid(nx)

    @pytest.mark.parametrize("length", [0.0, -1.0, float("inf"), float("nan")])
    def test_rejects_bad_length(self, length):
        with pytest.raises(ValueError):
            make_grid(16, length)

    def test_equality_and_hash(self):
        assert make_grid(16, 1.0) == Grid1D(16, 1.0)
        assert make_grid(16, 1.0) != make_grid(32, 1.0)
        assert hash(make_grid(16)) == hash(Grid1D(16))

    @given(nx=st.integers(4, 256).map(lambda k: 2 * k),
           length=st.floats(1e-3, 1e3, allow_nan=False))
    @settings(max_examples=30, deadline=None)
    def test_node_positions_property(self, nx, length):
        g = make_grid(nx, length)
        assert len(g.x) == nx
        steps = np.diff(g.x)
        np.testing.assert_allclose(steps, g.dx, rtol=1e-12)


class TestParamVector:
    def test_presence_and_order(self):
        pv = ParamVector(beta=1.0)
        assert pv.p == 1 and pv.names() == ("beta",)
        pv = ParamVector(nu=0.5)
        assert pv.p == 1 and pv.names() == ("nu",)
        pv = ParamVector(beta=2.0, nu=0.1)
        assert pv.p == 2 and pv.names() == ("beta", "nu")
        np.testing.assert_array_equal(pv.values(), [2.0, 0.1])
        assert ParamVector().p == 0

    def test_nu_must_be_positive(self):
        with pytest.raises(ValueError):
            ParamVector(nu=0.0)
        with pytest.raises(ValueError):
            ParamVector(nu=-0.1)

    def test_beta_may_be_negative_but_finite(self):
        assert ParamVector(beta=-2.0).beta == -2.0
        with pytest.raises(ValueError):
            ParamVector(beta=float("nan"))

    def test_get_missing_raises(self):
        with pytest.raises(KeyError):
            ParamVector(beta=1.0).get("nu")
        assert ParamVector(beta=1.0).get("beta") == 1.0

    def test_equality(self):
        assert ParamVector(beta=1.0) == ParamVector(beta=1.0)
        assert ParamVector(beta=1.0) != ParamVector(beta=1.0, nu=1.0)


class TestField1D:
    def test_shape_checked(self, grid32):
        with pytest.raises(ValueError):
            Field1D(grid32, np.zeros(31))
        with pytest.raises(ValueError):
            Field1D(grid32, np.zeros((2, 32)))

    def test_finite_checked(self, grid32):
        bad = np.zeros(32)
        bad[3] = np.nan
        with pytest.raises(ValueError):
            Field1D(grid32, bad)

    def test_values_read_only(self, grid32):
        f = Field1D(grid32, np.ones(32))
        with pytest.raises(ValueError):
            f.values[0] = 2.0

    def test_arithmetic(self, grid32):
        a = Field1D(grid32, np.full(32, 2.0))
        b = Field1D(grid32, np.full(32, 3.0))
        np.testing.assert_array_equal((a + b).values, 5.0)
        np.testing.assert_array_equal((b - a).values, 1.0)
        np.testing.assert_array_equal((a * 2.5).values, 5.0)
        np.testing.assert_array_equal((2.5 * a).values, 5.0)

    def test_cross_grid_arithmetic_rejected(self, grid32):
        other = Field1D(make_grid(64), np.zeros(64))
        with pytest.raises(ValueError):
            Field1D(grid32, np.zeros(32)) + other

    def test_boundary_pair(self, grid32):
        values = np.arange(32, dtype=float)
        assert boundary_pair(Field1D(grid32, values)) == (0.0, 31.0)


class TestTrajectory:
    def test_shape_and_snapshots(self, grid32):
        values = np.arange(5 * 32, dtype=float).reshape(5, 32)
        traj = Trajectory(grid=grid32, dt=0.01, params=ParamVector(beta=1.0), values=values)
        assert traj.n_steps == 4
        assert len(traj.snapshots) == 5
        np.testing.assert_array_equal(traj.snapshot(2).values, values[2])
        assert traj.snapshot(0).grid == grid32

    def test_rejects_bad_dt(self, grid32):
        with pytest.raises(ValueError):
            Trajectory(grid=grid32, dt=0.0, params=ParamVector(), values=np.zeros((2, 32)))

    def test_rejects_wrong_width(self, grid32):
        with pytest.raises(ValueError):
            Trajectory(grid=grid32, dt=0.01, params=ParamVector(), values=np.zeros((2, 31)))


class TestBoundaryValues:
    def test_at_and_len(self):
        bv = BoundaryValues(left=[1.0, 2.0], right=[3.0, 4.0])
        assert len(bv) == 2
        assert bv.at(1) == (2.0, 4.0)

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError):
            BoundaryValues(left=[1.0, 2.0], right=[3.0])

    def test_from_trajectory(self, grid32):
        values = np.arange(3 * 32, dtype=float).reshape(3, 32)
        traj = Trajectory(grid=grid32, dt=0.01, params=ParamVector(), values=values)
        bv = BoundaryValues.from_trajectory(traj)
        np.testing.assert_array_equal(bv.left, values[:, 0])
        np.testing.assert_array_equal(bv.right, values[:, -1])
        assert bv.at(2) == (values[2, 0], values[2, -1])
