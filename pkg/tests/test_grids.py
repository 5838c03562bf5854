"""O-grid generation, metrics and physical-space operators."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tnflow.core import decode_grid, encode_state, operator_to_dense
from tnflow.curvilinear import build_curvilinear_operators, sparse_operators
from tnflow.grids import (
    GridConvergenceError,
    GridFoldError,
    circle_points,
    control_functions,
    cylinder_grid,
    elliptic_grid,
    grid_from_arrays,
    identity_grid,
    min_spacing,
    naca0012_points,
    naca_grid,
    orthogonality_deviation,
    transfinite_grid,
    winslow_residual,
)


def apply(op, field, split):
    return decode_grid(op @ encode_state(field, split))


@pytest.fixture(scope="module")
def cyl():
    g = cylinder_grid(5, 5)
    return g, build_curvilinear_operators(g)


def test_cylinder_coordinates_are_polar(cyl):
    g, _ = cyl
    X, Y = (decode_grid(s) for s in (g.x, g.y))
    r = 0.5 + 7.5 * np.arange(32) / 31
    th = -2 * math.pi * np.arange(32) / 32
    np.testing.assert_allclose(X, r[:, None] * np.cos(th), atol=1e-12)
    np.testing.assert_allclose(Y, r[:, None] * np.sin(th), atol=1e-12)


def test_cylinder_jacobian_closed_form(cyl):
    # central xi differences on a circle, exact eta differences of a linear blend
    g, _ = cyl
    r = 0.5 + 7.5 * np.arange(32) / 31
    expect = r[:, None] * (7.5 / 31) * math.sin(2 * math.pi / 32) * np.ones((1, 32))
    np.testing.assert_allclose(decode_grid(g.jac), expect, rtol=1e-10)
    np.testing.assert_allclose(decode_grid(g.inv_jac), 1 / expect, rtol=1e-10)


def test_chain_rule_on_coordinates(cyl):
    g, ops = cyl
    X, Y = g.coords()
    split = g.axis_split
    np.testing.assert_allclose(apply(ops.dx, X, split), 1.0, atol=1e-10)
    np.testing.assert_allclose(apply(ops.dy, Y, split), 1.0, atol=1e-10)
    np.testing.assert_allclose(apply(ops.dx, Y, split), 0.0, atol=1e-10)
    np.testing.assert_allclose(apply(ops.dy, X, split), 0.0, atol=1e-10)
    # the first-derivative terms of the Laplacian are chosen to annihilate x and y
    np.testing.assert_allclose(apply(ops.lap, X, split), 0.0, atol=1e-8)
    np.testing.assert_allclose(apply(ops.lap, Y, split), 0.0, atol=1e-8)


def test_mps_operators_match_sparse_assembly(cyl):
    g, ops = cyl
    X, Y = g.coords()
    ref = sparse_operators(X, Y, True)
    for name in ("dx", "dy", "lap"):
        m = operator_to_dense(getattr(ops, name), dense_limit=10).real
        r = getattr(ref, name).toarray()
        assert np.abs(m - r).max() <= 1e-9 * np.abs(r).max(), name


def test_laplacian_converges_on_quadratic():
    errs = []
    for n in (5, 6, 7):
        g = cylinder_grid(n, n)
        ops = build_curvilinear_operators(g)
        X, Y = g.coords()
        out = apply(ops.lap, X**2 + Y**2, g.axis_split)
        rows = slice(1 << (n - 2), 3 << (n - 2))
        errs.append(np.abs(out[rows] - 4.0).max())
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[2] > 3.0


def test_identity_grid_reduces_to_cartesian():
    g = identity_grid(4, 3, spacing=1.0)
    ops = build_curvilinear_operators(g)
    for f in (g.x_xi, g.y_eta, g.jac, g.inv_jac):
        np.testing.assert_allclose(decode_grid(f), 1.0, atol=1e-12)
    for f in (g.x_eta, g.y_xi):
        np.testing.assert_allclose(decode_grid(f), 0.0, atol=1e-12)
    np.testing.assert_allclose(operator_to_dense(ops.dx), operator_to_dense(ops.d_xi), atol=1e-12)
    np.testing.assert_allclose(operator_to_dense(ops.dy), operator_to_dense(ops.d_eta), atol=1e-12)
    X, Y = g.coords()
    out = apply(ops.lap, X**2 - 2 * Y**2 + X * Y, g.axis_split)
    np.testing.assert_allclose(out, -2.0, atol=1e-10)
    assert orthogonality_deviation(g) == pytest.approx(0.0, abs=1e-12)
    assert min_spacing(g) == pytest.approx(1.0)


@settings(max_examples=10, deadline=None)
@given(radius=st.floats(0.1, 2.0), ratio=st.floats(2.0, 40.0), n=st.integers(3, 6))
def test_cylinder_jacobian_positive(radius, ratio, n):
    g = cylinder_grid(n, n, radius, radius * ratio)
    assert decode_grid(g.jac).min() > 0
    assert orthogonality_deviation(g) <= 1e-10


def test_counter_clockwise_curves_fold():
    pts = circle_points(0.5, 16)[::-1]
    with pytest.raises(GridFoldError):
        transfinite_grid(pts, circle_points(8.0, 16)[::-1], 4, 4)


def test_grid_input_validation():
    with pytest.raises(ValueError):
        grid_from_arrays(np.zeros((4, 4)), np.zeros((4, 8)))
    with pytest.raises(ValueError):
        grid_from_arrays(np.zeros((3, 4)), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        transfinite_grid(circle_points(1, 8), circle_points(2, 8), 4, 4)
    with pytest.raises(ValueError):
        elliptic_grid(identity_grid(3, 3))


def test_naca_surface():
    pts = naca0012_points(64)
    assert pts[0] == pytest.approx([0.5, 0.0])
    assert pts[32] == pytest.approx([-0.5, 0.0])
    assert np.abs(pts[:, 1]).max() == pytest.approx(0.06, abs=2e-3)
    # clockwise: lower surface first
    assert np.all(pts[1:32, 1] <= 0)


def test_elliptic_smoothing_keeps_a_harmonic_annulus():
    g = cylinder_grid(5, 4)
    X, Y = g.coords()
    # uniform spacing on both circles gives no forcing, so the result is the plain Winslow grid
    assert np.abs(control_functions(X, Y)).max() <= 1e-12
    out = elliptic_grid(g, iterations=400, omega=1.0)
    ref = elliptic_grid(g, iterations=400, omega=1.0, control="none")
    np.testing.assert_allclose(out.coords()[0], ref.coords()[0], atol=1e-9)
    again = elliptic_grid(out, iterations=3, omega=1.0)
    np.testing.assert_allclose(again.coords()[0], out.coords()[0], atol=1e-8)


def test_control_function_validation():
    X, Y = cylinder_grid(3, 3).coords()
    assert np.all(control_functions(X, Y, "none") == 0)
    with pytest.raises(ValueError):
        control_functions(X, Y, "spline")
    with pytest.raises(ValueError):
        elliptic_grid(cylinder_grid(3, 3), omega=0.0)


@pytest.fixture(scope="module")
def naca6():
    base = transfinite_grid(naca0012_points(64), circle_points(8.0, 64), 6, 6)
    return base, naca_grid(6, 6)


def test_elliptic_smoothing_on_naca(naca6):
    base, g = naca6
    X, Y = g.coords()
    assert g.method == "elliptic"
    assert winslow_residual(X, Y, control_functions(X, Y)) <= 1e-8
    assert decode_grid(g.jac).min() > 0
    assert min_spacing(g) > 0
    np.testing.assert_allclose(X[0], decode_grid(base.x)[0], atol=1e-12)
    np.testing.assert_allclose(X[-1], decode_grid(base.x)[-1], atol=1e-12)
    np.testing.assert_allclose(Y[0], decode_grid(base.y)[0], atol=1e-12)
    # smoothing straightens the skewed near-wall cells of the blend
    assert orthogonality_deviation(g) < orthogonality_deviation(base)
    with pytest.raises(GridConvergenceError):
        elliptic_grid(base, iterations=2, tolerance=1e-12)
