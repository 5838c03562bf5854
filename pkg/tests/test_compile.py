"""Isometric MPO compilation: cost, gradient, a_q and the unitary circuit."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tnflow.core import identity_operator, io, operator_from_dense, operator_to_dense
from tnflow.compile import (
    CompiledOperator,
    IsometricMPO,
    _tall_mats,
    _tangent,
    aux_projected_product,
    compile_operator,
    complete_unitaries,
    cost_function,
    dumps_compiled,
    init_isometric_cores,
    loads_compiled,
    reconstruct_dense,
    retract,
    riemannian_gradient,
    riemannian_step,
    update_a_q,
)
from tnflow.discrete import SpongeSpec, WavePhysics, build_M1


def random_operator(n, seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((1 << n, 1 << n))
    return operator_from_dense(m)


def product_unitary(n, seed):
    rng = np.random.default_rng(seed)
    m = np.ones((1, 1))
    for _ in range(n):
        q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        m = np.kron(m, q)
    return m


@pytest.fixture(scope="module")
def wave_m1():
    phys = WavePhysics(n_x=2, n_y=2)
    return build_M1(phys, SpongeSpec.none(phys), 2)


@pytest.mark.parametrize("init", ["polar", "identity", "random"])
def test_initial_cores_are_isometries(wave_m1, init):
    q = init_isometric_cores(wave_m1, 2, init, seed=3)
    assert max(q.isometry_residuals()) <= 1e-12
    assert q.n == wave_m1.n


def test_init_validation(wave_m1):
    with pytest.raises(ValueError):
        init_isometric_cores(wave_m1, 0)
    with pytest.raises(ValueError):
        init_isometric_cores(wave_m1, 2, "other")
    with pytest.warns(UserWarning):
        init_isometric_cores(random_operator(4, 0), 1)


def test_unitaries_reproduce_the_projected_product(wave_m1):
    q = init_isometric_cores(wave_m1, 2, "random", seed=1)
    units = complete_unitaries(q)
    for u in units:
        np.testing.assert_allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=1e-12)
    c = CompiledOperator(q, units, 1.0, 0.0, 2)
    np.testing.assert_allclose(aux_projected_product(c), operator_to_dense(q.operator()), atol=1e-12)
    # seeded completion: the circuit is reproducible
    for u, v in zip(units, complete_unitaries(q)):
        np.testing.assert_array_equal(u, v)


def test_a_q_and_cost_match_dense_least_squares(wave_m1):
    q = init_isometric_cores(wave_m1, 2, "random", seed=5)
    Q = operator_to_dense(q.operator())
    M = operator_to_dense(wave_m1)
    a_ref = np.vdot(Q, M).real / np.vdot(Q, Q).real
    assert update_a_q(q, wave_m1) == pytest.approx(a_ref, rel=1e-12)
    assert update_a_q(q, wave_m1, paper_denominator=True) == pytest.approx(np.vdot(Q, M).real / np.vdot(M, M).real)
    for a in (0.0, a_ref, 3.0):
        assert cost_function(q, wave_m1, a) == pytest.approx(np.linalg.norm(a * Q - M) ** 2, rel=1e-10)


def test_gradient_matches_finite_difference(wave_m1):
    q = init_isometric_cores(wave_m1, 2, "random", seed=7)
    a = update_a_q(q, wave_m1)
    grad = riemannian_gradient(q, wave_m1, a)
    rng = np.random.default_rng(0)
    direction = [g + 0.3 * (rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)) for g in grad]
    # keep the direction tangent so the retraction is second-order accurate
    direction = [_tangent(x, d) for (x, _), d in zip(_tall_mats(q), direction)]
    h = 1e-5
    fd = (cost_function(retract(q, direction, h), wave_m1, a)
          - cost_function(retract(q, direction, -h), wave_m1, a)) / (2 * h)
    analytic = sum(np.vdot(g, d).real for g, d in zip(grad, direction))
    assert fd == pytest.approx(analytic, rel=1e-5)


def test_riemannian_step_descends(wave_m1):
    q = init_isometric_cores(wave_m1, 2, "random", seed=2)
    a = update_a_q(q, wave_m1)
    c0 = cost_function(q, wave_m1, a)
    q1, t, c1 = riemannian_step(q, wave_m1, a)
    assert t > 0 and c1 < c0
    assert max(q1.isometry_residuals()) <= 1e-12


def test_compile_product_unitary_exactly():
    n = 4
    target = operator_from_dense(3.0 * product_unitary(n, 4))
    c = compile_operator(target, 1, tol=1e-12, max_iters=500, init="random", seed=0)
    assert c.converged and c.epsilon <= 1e-12
    # Q may be a slightly contracted unitary, compensated by a_q
    assert abs(c.a_q) == pytest.approx(3.0, rel=1e-3)
    _, _, gap = reconstruct_dense(c, target)
    assert gap**2 == pytest.approx(c.epsilon, abs=1e-12)


def test_identity_compiles_from_identity_start():
    c = compile_operator(identity_operator(3), 1, init="identity")
    assert c.epsilon == 0.0 and c.a_q == pytest.approx(1.0)
    assert c.history == (0.0,)


def test_compile_history_is_monotone(wave_m1):
    c = compile_operator(wave_m1, 2, tol=1e-14, max_iters=40, init="random", seed=1)
    hist = np.array(c.history)
    assert np.all(np.diff(hist) <= 1e-14)
    assert c.epsilon == pytest.approx(hist[-1])
    _, _, gap = reconstruct_dense(c, wave_m1)
    assert gap**2 == pytest.approx(c.epsilon, rel=1e-8, abs=1e-14)


@settings(max_examples=10, deadline=None)
@given(scale=st.floats(1e-3, 1e3))
def test_relative_error_is_scale_invariant(wave_m1, scale):
    q = init_isometric_cores(wave_m1, 2, "random", seed=9)
    a = update_a_q(q, wave_m1)
    eps = cost_function(q, wave_m1, a) / np.linalg.norm(operator_to_dense(wave_m1)) ** 2
    scaled = wave_m1 * scale
    a_s = update_a_q(q, scaled)
    assert a_s == pytest.approx(scale * a, rel=1e-9)
    eps_s = cost_function(q, scaled, a_s) / np.linalg.norm(operator_to_dense(scaled)) ** 2
    assert eps_s == pytest.approx(eps, rel=1e-8)


def test_compile_validation(wave_m1):
    with pytest.raises(ValueError):
        compile_operator(wave_m1 * 0.0, 2)
    with pytest.raises(ValueError):
        compile_operator(wave_m1, 2, method="newton")


def test_serialization_roundtrip(wave_m1):
    c = compile_operator(wave_m1, 2, max_iters=5, init="random", seed=4)
    back = loads_compiled(dumps_compiled(c))
    assert (back.n, back.z, back.a_q, back.epsilon, back.converged) == (c.n, c.z, c.a_q, c.epsilon, c.converged)
    for a, b in zip(c.unitaries, back.unitaries):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(c.q.cores, back.q.cores):
        np.testing.assert_array_equal(a, b)
    data = dumps_compiled(c)
    with pytest.raises(io.FormatError):
        loads_compiled(b"XXXX" + data[4:])
    with pytest.raises(io.FormatError):
        loads_compiled(data[:10])


def test_isometric_cores_are_read_only(wave_m1):
    q = init_isometric_cores(wave_m1, 2)
    assert isinstance(q, IsometricMPO)
    with pytest.raises(ValueError):
        q.cores[0][0, 0, 0, 0] = 1.0
