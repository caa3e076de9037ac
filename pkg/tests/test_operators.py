import math

import numpy as np
import pytest
import scipy.io
from hypothesis import given, settings, strategies as st

from bpfd.errors import DimensionMismatch, GridError
from bpfd.grid import Grid1D, Grid2D
from bpfd.operators import (
    ConvDiffOperator,
    FieldState,
    VelocityField,
    apply_L,
    apply_L_full,
    assemble_matrix,
    build_ops_1d,
    central_derivative,
    export_matrix_market,
    fourth_order_derivative,
    neumann_ops_1d,
    unvec,
    vec,
)

from oracles import END_D1, END_D2, MID_D2, dense_operator


def test_order4_d2_rows_match_table():
    h = 0.1
    ops = build_ops_1d(7, h, 4)
    d2 = ops.d2.toarray() * h**2
    # row 0 is interior point 1 (odd: cell centre) -> columns 0..2
    np.testing.assert_allclose(d2[0, :3], [1, -2, 1], atol=1e-12)
    # row 1 is interior point 2 (even: cell end) -> columns 0..4
    np.testing.assert_allclose(-d2[1, :5], [0.25, -2, 3.5, -2, 0.25], atol=1e-12)
    d1 = ops.d1.toarray() * 2 * h
    np.testing.assert_allclose(d1[0, :3], [-1, 0, 1], atol=1e-12)
    np.testing.assert_allclose(d1[1, :5], [0.5, -2, 0, 2, -0.5], atol=1e-12)


@pytest.mark.parametrize("order", [2, 4])
@pytest.mark.parametrize("bc, n", [("dirichlet", 9), ("periodic", 10)])
def test_row_sums_vanish_exactly(order, bc, n):
    ops = build_ops_1d(n, 0.37, order, bc)
    ones = np.ones(n if bc == "periodic" else n + 2)
    assert np.all(ops.apply_d1(ones) == 0.0)
    assert np.all(ops.apply_d2(ones) == 0.0)


def test_oracle_stencils_sum_to_zero():
    for st_ in (END_D1, END_D2, MID_D2):
        assert sum(st_.values()) == 0


@pytest.mark.parametrize(
    "n, order, bc", [(8, 4, "dirichlet"), (7, 4, "periodic"), (2, 4, "periodic"), (2, 2, "periodic")]
)
def test_invalid_sizes(n, order, bc):
    with pytest.raises(GridError):
        build_ops_1d(n, 0.1, order, bc)


def test_order_must_be_2_or_4():
    with pytest.raises(ValueError):
        build_ops_1d(9, 0.1, 3)


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from([2, 4]),
    st.sampled_from(["dirichlet", "periodic"]),
    st.floats(1e-3, 10),
    st.floats(1e-4, 10),
    st.integers(0, 2**31 - 1),
)
def test_constants_are_preserved(order, bc, mu, dt, seed):
    n = 7 if bc == "dirichlet" else 8
    g = Grid2D.square(n, 0, 1, bc)
    rng = np.random.default_rng(seed)
    vel = VelocityField(rng.normal(0, 5, g.interior_shape), rng.normal(0, 5, g.interior_shape))
    op = ConvDiffOperator(g, order, mu, dt, vel)
    assert np.all(apply_L(op, np.ones(g.shape)) == 1.0)


def test_linear_field_unchanged_without_velocity():
    g = Grid2D.square(9, 0, 1)
    x, y = g.meshgrid()
    op = ConvDiffOperator(g, 4, mu=1.0, dt=1.0)
    np.testing.assert_allclose(apply_L(op, 2 * x - 3 * y + 1)[...], (2 * x - 3 * y + 1)[g.interior], atol=1e-12)


def test_cell_centre_hot_spot():
    g = Grid2D.square(7, 0, 1)
    h = g.h
    phi = np.zeros(g.shape)
    i, j = 3, 3  # both odd: cell centre
    phi[j, i] = 1.0
    op = ConvDiffOperator(g, 4, mu=1.0, dt=h * h)
    out = np.zeros(g.shape)
    out[g.interior] = apply_L(op, phi)
    assert out[j, i] == pytest.approx(5.0)
    for jj, ii in [(j, i - 1), (j, i + 1), (j - 1, i), (j + 1, i)]:
        assert out[jj, ii] == pytest.approx(-2.0)  # edge centres: end-row weight 2 at distance 1
    out[j, i] = 0
    for jj, ii in [(j, i - 1), (j, i + 1), (j - 1, i), (j + 1, i)]:
        out[jj, ii] = 0
    assert np.allclose(out, 0.0)


@pytest.mark.parametrize("order", [2, 4])
@pytest.mark.parametrize("bc, n", [("dirichlet", 5), ("periodic", 6)])
def test_assembled_matches_pointwise_oracle(order, bc, n):
    rng = np.random.default_rng(7)
    g = Grid2D.square(n, 0, 1, bc)
    u, v = rng.standard_normal(g.interior_shape), rng.standard_normal(g.interior_shape)
    op = ConvDiffOperator(g, order, 0.4, 0.3, VelocityField(u, v), s=0.5)
    ref = dense_operator(n, n, g.h, order, 0.4, 0.3, u, v, 0.5, bc == "periodic")
    np.testing.assert_allclose(op.matrix().toarray(), ref, rtol=0, atol=1e-12 * np.abs(ref).max())


def test_assembled_matches_matrix_free():
    rng = np.random.default_rng(3)
    g = Grid2D.square(5, 0, 1)
    vel = VelocityField(rng.standard_normal((5, 5)), rng.standard_normal((5, 5)))
    op = ConvDiffOperator(g, 4, 0.2, 0.05, vel)
    phi = rng.standard_normal(g.shape)
    diff = op.matrix() @ vec(phi) - vec(apply_L_full(op, phi))
    assert np.max(np.abs(diff)) < 1e-13


def test_small_assembly_structure():
    g = Grid2D.square(3, 0, 1)
    a = ConvDiffOperator(g, 4, 1.0, 1.0).matrix()
    assert a.shape == (25, 25)
    dense = a.toarray()
    boundary = np.flatnonzero(vec(g.boundary_mask()))
    inner = np.flatnonzero(~vec(g.boundary_mask()))
    pattern = dense[np.ix_(inner, inner)] != 0
    assert np.array_equal(pattern, pattern.T)
    assert boundary.size == 16
    np.testing.assert_array_equal(dense[boundary], np.eye(25)[boundary])
    np.testing.assert_allclose(a @ np.ones(25), np.ones(25), atol=1e-14)


def test_row_support_at_most_nine():
    g = Grid2D.square(9, 0, 1)
    rng = np.random.default_rng(0)
    vel = VelocityField(rng.standard_normal((9, 9)), rng.standard_normal((9, 9)))
    a = ConvDiffOperator(g, 4, 1.0, 0.1, vel).matrix()
    assert np.diff(a.indptr).max() <= 9


def test_second_order_is_classical():
    g = Grid2D.square(5, 0, 1)
    h = g.h
    rng = np.random.default_rng(1)
    phi = rng.standard_normal(g.shape)
    u, v = rng.standard_normal((5, 5)), rng.standard_normal((5, 5))
    op = ConvDiffOperator(g, 2, 0.3, 0.2, VelocityField(u, v))
    c = phi[1:-1, 1:-1]
    lap = (phi[1:-1, 2:] + phi[1:-1, :-2] + phi[2:, 1:-1] + phi[:-2, 1:-1] - 4 * c) / h**2
    conv = u * (phi[1:-1, 2:] - phi[1:-1, :-2]) / (2 * h) + v * (phi[2:, 1:-1] - phi[:-2, 1:-1]) / (2 * h)
    np.testing.assert_allclose(apply_L(op, phi), c + 0.2 * (conv - 0.3 * lap), atol=1e-12)


def test_fourth_order_d2_exact_on_cubics():
    g = Grid1D(11, -1, 2)
    ops = build_ops_1d(11, g.h, 4)
    x = g.nodes()
    f = 2 * x**3 - x**2 + 4 * x - 1
    np.testing.assert_allclose(ops.apply_d2(f), (12 * x - 2)[1:-1], atol=1e-10)


def test_one_dimensional_operator():
    g = Grid1D(9, 0, 1)
    vel = VelocityField(np.linspace(-1, 1, 9))
    op = ConvDiffOperator(g, 4, 0.5, 0.1, vel)
    phi = np.sin(3 * g.nodes())
    assert np.max(np.abs(op.matrix() @ phi - apply_L_full(op, phi))) < 1e-13
    assert np.all(apply_L(op, np.ones(11)) == 1.0)


def test_neumann_fixture_row_sums():
    d1, d2 = neumann_ops_1d(9, 0.1)
    assert d1.shape == d2.shape == (11, 11)
    np.testing.assert_allclose(d1 @ np.ones(11), 0, atol=1e-12)
    np.testing.assert_allclose(d2 @ np.ones(11), 0, atol=1e-9)


class TestDerivative:
    def test_constant(self):
        g = Grid2D.square(16, 0, 2 * math.pi, "periodic")
        assert np.all(fourth_order_derivative(np.full(g.shape, 3.0), g, "x") == 0)

    def test_sine_convergence_ratio(self):
        errs = []
        for n in (40, 80):
            g = Grid2D.square(n, 0, 2 * math.pi, "periodic")
            x, y = g.meshgrid()
            errs.append(np.max(np.abs(fourth_order_derivative(np.sin(x), g, "x") - np.cos(x))))
        assert errs[0] / errs[1] == pytest.approx(16, rel=0.02)

    def test_polynomial_truncation_term(self):
        g = Grid2D.square(15, 0, 1)
        x, y = g.meshgrid()
        h = g.h
        dx4 = fourth_order_derivative(x**4, g, "x")
        inner = (slice(None), slice(2, -2))  # away from the biased wall rows
        np.testing.assert_allclose(dx4[inner], (4 * x**3)[g.interior][inner], atol=1e-11)
        # x^5: error of the centred 5-point formula is -h^4/30 * f^(5) = -4 h^4
        dx5 = fourth_order_derivative(x**5, g, "x")
        err = dx5[inner] - (5 * x**4)[g.interior][inner]
        np.testing.assert_allclose(err, -4 * h**4, rtol=1e-6)

    def test_axis_y_and_central(self):
        g = Grid2D.square(32, 0, 2 * math.pi, "periodic")
        x, y = g.meshgrid()
        assert np.max(np.abs(fourth_order_derivative(np.sin(y), g, "y") - np.cos(y))) < 1e-4
        assert np.max(np.abs(central_derivative(np.sin(y), g, "y") - np.cos(y))) < 1e-2

    def test_bad_inputs(self):
        g = Grid2D.square(3, 0, 1)
        with pytest.raises(GridError):
            fourth_order_derivative(np.zeros(g.shape), g, "x")
        with pytest.raises(ValueError):
            fourth_order_derivative(np.zeros(g.shape), g, "z")
        with pytest.raises(DimensionMismatch):
            fourth_order_derivative(np.zeros((3, 3)), g, "x")


def test_matrix_market_roundtrip(tmp_path):
    g = Grid2D.square(3, 0, 1)
    a = ConvDiffOperator(g, 4, 1.0, 0.5).matrix()
    path = export_matrix_market(a, tmp_path / "op")
    back = scipy.io.mmread(str(path)).tocsr()
    assert abs(back - a).max() < 1e-15


def test_velocity_norm_tracks_mutation():
    vel = VelocityField(np.zeros((3, 3)), np.zeros((3, 3)))
    assert vel.max_norm == 0
    vel.v[1, 1] = -4.0
    assert vel.max_norm == 4.0


def test_validation():
    g = Grid2D.square(5)
    with pytest.raises(ValueError):
        ConvDiffOperator(g, 4, mu=0.0)
    with pytest.raises(ValueError):
        ConvDiffOperator(g, 4, dt=-1.0)
    with pytest.raises(ValueError):
        ConvDiffOperator(g, 4, s=-1.0)
    with pytest.raises(DimensionMismatch):
        ConvDiffOperator(g, 4, velocity=VelocityField(np.zeros((7, 7)), np.zeros((7, 7))))
    with pytest.raises(DimensionMismatch):
        FieldState(np.zeros((5, 5)), g)
    op = ConvDiffOperator(g, 4)
    with pytest.raises(DimensionMismatch):
        apply_L(op, np.zeros((5, 5)))


def test_vec_roundtrip():
    a = np.arange(12.0).reshape(3, 4)
    assert vec(a)[1] == a[1, 0]
    np.testing.assert_array_equal(unvec(vec(a), a.shape), a)


def test_assemble_function_equals_cached_matrix():
    g = Grid2D.square(5)
    op = ConvDiffOperator(g, 4, 0.3, 0.2)
    assert abs(assemble_matrix(op) - op.matrix()).max() == 0
