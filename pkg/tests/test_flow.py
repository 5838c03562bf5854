"""Chorin projection on O-grids: operators, pressure solve, wall diagnostics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tnflow.core import TruncationPolicy, decode_grid, encode_state, operator_to_dense
from tnflow.flow import (
    CFLViolation,
    FlowParams,
    PoissonConfig,
    SteadyDetector,
    build_flow_problem,
    chorin_step,
    horizontal_force_from_wall,
    null_vector_arrays,
    poisson_solve,
    pressure_coefficient,
    pressure_rows_array,
    relative_error_series,
    remove_null,
    run_flow,
    stable_dt,
    wall_pressure,
)
from tnflow.flow_dense import dense_flow_for
from tnflow.grids import cylinder_grid, identity_grid

EXACT = TruncationPolicy.exact()


@pytest.fixture(scope="module")
def cyl():
    g = cylinder_grid(4, 4)
    return g, build_flow_problem(g)


def test_pressure_operator_is_symmetric_positive_definite(cyl):
    _, pb = cyl
    K = operator_to_dense(pb.proj.K).real
    np.testing.assert_allclose(K, K.T, atol=1e-10 * np.abs(K).max())
    assert np.linalg.eigvalsh(K).min() > 1e-8


def test_null_vectors_are_invisible_to_the_divergence_adjoint(cyl):
    g, pb = cyl
    for nv in null_vector_arrays(g):
        s = encode_state(nv, g.axis_split)
        gx = decode_grid(pb.proj.gx @ s)
        gy = decode_grid(pb.proj.gy @ s)
        assert max(np.abs(gx).max(), np.abs(gy).max()) <= 1e-10


def test_poisson_manufactured_solution(cyl):
    g, pb = cyl
    rng = np.random.default_rng(0)
    p = rng.standard_normal(g.shape) * pressure_rows_array(g)
    p_state = remove_null(encode_state(p, g.axis_split), pb.proj.null, EXACT)
    rhs = pb.proj.K @ p_state
    sol = poisson_solve(pb.proj.K, rhs, PoissonConfig(tol=1e-12, sweeps=40))
    assert sol.converged
    np.testing.assert_allclose(decode_grid(sol.x), decode_grid(p_state), atol=1e-9)


def test_zero_rhs_gives_zero_pressure(cyl):
    g, pb = cyl
    sol = poisson_solve(pb.proj.K, encode_state(np.zeros(g.shape), g.axis_split))
    assert sol.converged and np.abs(decode_grid(sol.x)).max() == 0.0


def test_step_is_divergence_free_and_matches_dense(cyl):
    g, pb = cyl
    dense = dense_flow_for(g, pb.params)
    fs, ds = pb.initial_state(), dense.initial_state()
    cfg = PoissonConfig(tol=1e-11)
    for _ in range(5):
        fs, info = chorin_step(fs, pb, EXACT, cfg)
        ds = dense.step(ds)
        assert info.divergence <= 10 * cfg.tol
        assert dense.relative_divergence(ds) <= 1e-12
    f, d = fs.fields(), dense.grid_fields(ds)
    for k in ("u", "v"):
        assert np.linalg.norm(f[k] - d[k]) <= 1e-9 * np.linalg.norm(d[k])


def test_uniform_flow_is_a_fixed_point_on_the_identity_grid():
    g = identity_grid(4, 4, spacing=0.25)
    pb = build_flow_problem(g, FlowParams(nu=0.01, u_inf=1.0))
    fs, info = chorin_step(pb.initial_state(), pb, EXACT)
    np.testing.assert_allclose(decode_grid(fs.u), 1.0, atol=1e-10)
    np.testing.assert_allclose(decode_grid(fs.v), 0.0, atol=1e-10)
    np.testing.assert_allclose(decode_grid(fs.p), 0.0, atol=1e-10)


def test_identical_runs_agree_exactly(cyl):
    _, pb = cyl
    a = run_flow(pb, 3, EXACT, sample_every=1)[2]
    b = run_flow(pb, 3, EXACT, sample_every=1)[2]
    errs = relative_error_series(a, b)
    assert np.all(errs["p"] == 0) and np.all(errs["speed"] == 0)


def test_cfl_bounds(cyl):
    g, _ = cyl
    prm = FlowParams()
    dt = stable_dt(g, prm)
    with pytest.raises(CFLViolation, match="diffusive"):
        build_flow_problem(g, FlowParams(dt=dt * 100, nu=10.0))
    with pytest.raises(CFLViolation, match="advective"):
        build_flow_problem(g, FlowParams(dt=dt * 10, nu=1e-6))


def test_wall_extrapolation_is_exact_for_zero_gradient_quadratics():
    eta = np.arange(8) - 0.5  # half-row positions
    p = np.repeat((2.0 + 0.3 * eta**2)[:, None], 4, axis=1)
    np.testing.assert_allclose(wall_pressure(p), 2.0)
    prm = FlowParams(rho=2.0, u_inf=3.0)
    np.testing.assert_allclose(pressure_coefficient(p, prm, 2.0), 0.0, atol=1e-15)
    np.testing.assert_allclose(pressure_coefficient(p + 9.0, prm, 2.0), 1.0)


def test_force_of_linear_pressure_on_cylinder():
    n = 5
    g = cylinder_grid(n, 3, radius=0.5)
    X, _ = g.coords()
    count = 1 << n
    force = horizontal_force_from_wall(X[0], 0.0, g)
    # n_x into the body is -cos(theta); |x_xi| = r sin(2 pi / N) per index step
    assert force == pytest.approx(-0.25 * math.sin(2 * math.pi / count) * count / 2, rel=1e-12)
    assert horizontal_force_from_wall(np.full(count, 7.0), 7.0, g) == 0.0
    assert horizontal_force_from_wall(np.full(count, 7.0), 0.0, g) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=20)
@given(changes=st.lists(st.floats(0, 1e-6), min_size=1, max_size=30))
def test_steady_detector_counts_consecutive_quiet_steps(changes):
    det = SteadyDetector(tol=1e-7, count=3)
    run = 0
    for c in changes:
        run = run + 1 if c <= 1e-7 else 0
        assert det.update(c) == (run >= 3)


def test_relative_error_series_handles_zero_reference():
    z = {"u": np.zeros((2, 2)), "v": np.zeros((2, 2)), "p": np.zeros((2, 2))}
    out = relative_error_series([z], [z])
    assert math.isnan(out["p"][0]) and math.isnan(out["speed"][0])
    with pytest.raises(ValueError):
        relative_error_series([z], [])
