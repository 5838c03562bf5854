"""MPS/MPO arithmetic checked against dense numpy evaluation."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tnflow.core import (
    LOSSLESS,
    TensorTrainState,
    TruncationPolicy,
    add,
    basis_label,
    canonicalize,
    compose_operators,
    compression_rate,
    constant_state,
    decode_grid,
    decode_state,
    diag_operator,
    encode_state,
    grid_one_hot,
    identity_operator,
    inner,
    isometry_residuals,
    linear_combination,
    norm,
    nvps,
    one_hot,
    operator_from_dense,
    operator_norm_fro,
    operator_to_dense,
    pointwise_multiply,
    product_state,
    scale_add_operators,
    truncate,
    zero_state,
    apply_operator,
)
from tnflow.stencils import StencilSpec, fd_mpo, shift_mpo, stencil_matrix

SETTINGS = settings(max_examples=25, deadline=None)


def rand_vec(rng, n, complex_=True):
    v = rng.standard_normal(1 << n)
    if complex_:
        v = v + 1j * rng.standard_normal(1 << n)
    return v


def rand_op(rng, n, bond=3):
    cores = []
    for k in range(n):
        left = 1 if k == 0 else bond
        right = 1 if k == n - 1 else bond
        cores.append(rng.standard_normal((left, 2, 2, right)) + 1j * rng.standard_normal((left, 2, 2, right)))
    from tnflow.core import TensorTrainOperator
    return TensorTrainOperator(tuple(cores))


# -- encoding ----------------------------------------------------------------

def test_constant_field_has_unit_bonds():
    s = encode_state(np.ones(1 << 8))
    assert s.bonds == [1] * 7
    np.testing.assert_allclose(decode_state(s), np.ones(1 << 8), atol=1e-14)


def test_one_hot_grid_label():
    s = encode_state(decode_state(grid_one_hot(1, 5, (4, 4))), (4, 4))
    assert s.max_bond == 1
    idx = int(np.argmax(np.abs(decode_state(s))))
    assert basis_label(idx, 8) == "01010001"
    grid = decode_grid(s)
    expected = np.zeros((16, 16))
    expected[5, 1] = 1.0
    np.testing.assert_allclose(grid, expected, atol=1e-14)


def test_random_roundtrip_n10():
    rng = np.random.default_rng(0)
    v = rand_vec(rng, 10)
    assert np.max(np.abs(decode_state(encode_state(v, policy=LOSSLESS)) - v)) <= 1e-12


def test_prefactor_scales_norm():
    rng = np.random.default_rng(1)
    s = encode_state(rand_vec(rng, 6))
    unit = s.with_prefactor(1.0)
    assert np.linalg.norm(decode_state(unit)) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(decode_state(unit.with_prefactor(2.0))) == pytest.approx(2.0, abs=1e-12)


def test_length_must_be_power_of_two():
    with pytest.raises(ValueError):
        encode_state(np.ones(12))
    with pytest.raises(ValueError):
        encode_state(np.ones(16), axis_split=(3, 2))


def test_real_decode_rejects_imaginary_part():
    s = encode_state(np.ones(8) * 1j)
    with pytest.raises(ValueError):
        decode_state(s, real=True)


def test_core_shape_validation():
    with pytest.raises(ValueError):
        TensorTrainState((np.ones((1, 3, 1)),))
    with pytest.raises(ValueError):
        TensorTrainState((np.ones((1, 2, 2)), np.ones((3, 2, 1))))


@SETTINGS
@given(n=st.integers(1, 12), seed=st.integers(0, 2**31))
def test_roundtrip_property(n, seed):
    v = rand_vec(np.random.default_rng(seed), n)
    assert np.max(np.abs(decode_state(encode_state(v, policy=LOSSLESS)) - v)) <= 1e-12 * max(1, np.abs(v).max())


# -- truncation ---------------------------------------------------------------

def test_maximal_bond_keeps_state():
    rng = np.random.default_rng(2)
    n = 8
    v = rand_vec(rng, n)
    s = truncate(encode_state(v, policy=LOSSLESS), TruncationPolicy(max_bond=1 << (n // 2), cutoff=0.0))
    np.testing.assert_allclose(decode_state(s), v, atol=1e-12)


def test_rank_one_unchanged_at_bond_one():
    rng = np.random.default_rng(3)
    s = product_state([rng.standard_normal(2) for _ in range(6)])
    t = truncate(s, TruncationPolicy(max_bond=1))
    np.testing.assert_allclose(decode_state(t), decode_state(s), atol=1e-13)


def _dense_tt_error(v, n, chi):
    """Oracle: sequential truncated SVDs on the unfolding, as a plain numpy TT-SVD."""
    rest = v.reshape(1, -1)
    cores = []
    for _ in range(n - 1):
        left = rest.shape[0]
        u, s, vh = np.linalg.svd(rest.reshape(left * 2, -1), full_matrices=False)
        k = min(chi, len(s))
        cores.append(u[:, :k].reshape(left, 2, k))
        rest = s[:k, None] * vh[:k]
    out = rest.reshape(-1, 2)
    for c in reversed(cores):
        out = np.einsum("lpr,r...->lp...", c, out.reshape(c.shape[2], -1)).reshape(c.shape[0], -1)
    return out.reshape(-1)


def test_gaussian_truncation_matches_svd_oracle():
    n = 12
    x = np.linspace(-1, 1, 1 << n)
    v = np.exp(-(x / 0.3) ** 2)
    s = encode_state(v, policy=TruncationPolicy(max_bond=8, cutoff=0.0))
    err = np.linalg.norm(decode_state(s).real - v) / np.linalg.norm(v)
    assert err <= 1e-6
    ref = _dense_tt_error(v, n, 8)
    assert np.linalg.norm(ref - v) / np.linalg.norm(v) <= 1e-6


@SETTINGS
@given(seed=st.integers(0, 2**31), center=st.integers(0, 7))
def test_isometries_after_truncate(seed, center):
    rng = np.random.default_rng(seed)
    s = truncate(encode_state(rand_vec(rng, 8)), TruncationPolicy(max_bond=5))
    assert max(isometry_residuals(s, 0), default=0.0) <= 1e-12
    c = canonicalize(s, center)
    assert max(isometry_residuals(c, center), default=0.0) <= 1e-12
    np.testing.assert_allclose(decode_state(c), decode_state(s), atol=1e-12)


@SETTINGS
@given(seed=st.integers(0, 2**31))
def test_discarded_weight_monotone_in_bond(seed):
    rng = np.random.default_rng(seed)
    s = encode_state(rand_vec(rng, 8), policy=LOSSLESS)
    weights = [truncate(s, TruncationPolicy(max_bond=chi, cutoff=0.0)).discarded_weight for chi in range(1, 17)]
    assert all(a >= b - 1e-14 for a, b in zip(weights, weights[1:]))


# -- addition and inner products ------------------------------------------------

def test_add_zero_and_negation():
    rng = np.random.default_rng(4)
    a = encode_state(rand_vec(rng, 6))
    np.testing.assert_allclose(decode_state(add(a, zero_state(6))), decode_state(a), atol=1e-13)
    assert norm(add(a, -a)) <= 1e-12 * norm(a)


def test_add_matches_dense():
    rng = np.random.default_rng(5)
    va, vb = rand_vec(rng, 8), rand_vec(rng, 8)
    out = add(encode_state(va, policy=LOSSLESS), encode_state(vb, policy=LOSSLESS), LOSSLESS)
    assert np.max(np.abs(decode_state(out) - (va + vb))) <= 1e-12 * np.abs(va + vb).max() * 10


def test_linear_combination_matches_dense():
    rng = np.random.default_rng(6)
    vs = [rand_vec(rng, 7) for _ in range(3)]
    out = linear_combination([1.0, -2.0, 0.5j], [encode_state(v) for v in vs], LOSSLESS)
    np.testing.assert_allclose(decode_state(out), vs[0] - 2 * vs[1] + 0.5j * vs[2], atol=1e-11)


def test_inner_properties():
    rng = np.random.default_rng(7)
    va, vb = rand_vec(rng, 10), rand_vec(rng, 10)
    a, b = encode_state(va), encode_state(vb)
    aa = inner(a, a)
    assert aa.real >= 0 and abs(aa.imag) <= 1e-14 * aa.real
    assert inner(a, b) == pytest.approx(np.vdot(va, vb), rel=1e-12)
    assert inner(one_hot(3, 5), one_hot(4, 5)) == 0


# -- operators ----------------------------------------------------------------

def test_identity_leaves_state():
    rng = np.random.default_rng(8)
    s = encode_state(rand_vec(rng, 6))
    np.testing.assert_allclose(decode_state(apply_operator(identity_operator(6), s)), decode_state(s),
                               atol=1e-13)


def test_shift_moves_one_hot():
    out = apply_operator(shift_mpo(5, 1), one_hot(7, 5))
    # (S_1 v)[i] = v[i + 1]: the one-hot at 7 lands on 6
    expected = np.zeros(32)
    expected[6] = 1.0
    np.testing.assert_allclose(decode_state(out), expected, atol=1e-14)


def test_random_matvec_n8():
    rng = np.random.default_rng(9)
    op = rand_op(rng, 8)
    v = rand_vec(rng, 8)
    out = apply_operator(op, encode_state(v, policy=LOSSLESS), LOSSLESS)
    ref = operator_to_dense(op) @ v
    assert np.max(np.abs(decode_state(out) - ref)) <= 1e-10 * np.abs(ref).max()


@SETTINGS
@given(seed=st.integers(0, 2**31), alpha=st.floats(-3, 3), beta=st.floats(-3, 3))
def test_apply_is_linear(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    op = rand_op(rng, 6, 2)
    a, b = encode_state(rand_vec(rng, 6)), encode_state(rand_vec(rng, 6))
    lhs = apply_operator(op, linear_combination([alpha, beta], [a, b], LOSSLESS), LOSSLESS)
    rhs = linear_combination([alpha, beta], [apply_operator(op, a, LOSSLESS), apply_operator(op, b, LOSSLESS)],
                             LOSSLESS)
    scale = max(1.0, np.abs(decode_state(rhs)).max())
    assert np.max(np.abs(decode_state(lhs) - decode_state(rhs))) <= 1e-10 * scale


def test_operator_from_dense_roundtrip():
    rng = np.random.default_rng(10)
    m = rng.standard_normal((16, 16))
    np.testing.assert_allclose(operator_to_dense(operator_from_dense(m, LOSSLESS)), m, atol=1e-12)


def test_pointwise_multiply():
    rng = np.random.default_rng(11)
    va, vb = rand_vec(rng, 8), rand_vec(rng, 8)
    a = encode_state(va)
    out = pointwise_multiply(a, encode_state(vb), LOSSLESS)
    assert np.max(np.abs(decode_state(out) - va * vb)) <= 1e-10 * np.abs(va * vb).max()
    np.testing.assert_allclose(decode_state(pointwise_multiply(a, constant_state(8))), va, atol=1e-12)
    np.testing.assert_allclose(decode_state(pointwise_multiply(one_hot(3, 4), one_hot(3, 4))),
                               decode_state(one_hot(3, 4)), atol=1e-14)
    assert norm(pointwise_multiply(one_hot(3, 4), one_hot(5, 4))) == 0.0


def test_diag_operator():
    assert operator_norm_fro(scale_add_operators(1.0, diag_operator(constant_state(5)), -1.0,
                                                 identity_operator(5))) <= 1e-14
    rng = np.random.default_rng(12)
    m = encode_state(rand_vec(rng, 6), policy=TruncationPolicy(max_bond=4))
    assert diag_operator(m).bonds == m.bonds


@SETTINGS
@given(n=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_diag_commutes_with_decode(n, seed):
    m = encode_state(rand_vec(np.random.default_rng(seed), n))
    np.testing.assert_allclose(operator_to_dense(diag_operator(m)), np.diag(decode_state(m)), atol=1e-12)


def test_compose_and_scale_add():
    rng = np.random.default_rng(13)
    a, b = rand_op(rng, 5, 2), rand_op(rng, 5, 2)
    eye = identity_operator(5)
    np.testing.assert_allclose(operator_to_dense(compose_operators(a, eye)), operator_to_dense(a), atol=1e-12)
    np.testing.assert_allclose(operator_to_dense(scale_add_operators(1.0, a, 0.0, b)), operator_to_dense(a),
                               atol=1e-12)
    assert operator_norm_fro(scale_add_operators(2.0, eye, -2.0, eye)) <= 1e-12


def test_first_derivative_squared_matches_dense():
    spec = StencilSpec(1, 2, "x", "periodic", 0.1)
    d = fd_mpo(spec, 6)
    dd = compose_operators(d, d)
    dense = stencil_matrix(64, spec).toarray()
    np.testing.assert_allclose(operator_to_dense(dd), dense @ dense, atol=1e-10)


# -- variable counts ----------------------------------------------------------

def test_nvps_product_state():
    s = product_state([[1.0, 2.0]] * 4)
    assert nvps(s) == 8
    assert compression_rate(nvps(s), 4) == 0.5


def test_nvps_full_rank_state():
    rng = np.random.default_rng(14)
    s = encode_state(rand_vec(rng, 4), policy=LOSSLESS)
    shapes = [c.shape for c in s.cores]
    assert shapes == [(1, 2, 2), (2, 2, 4), (4, 2, 2), (2, 2, 1)]
    assert nvps(s) == sum(int(np.prod(sh)) for sh in shapes) == 4 + 16 + 16 + 4
    assert compression_rate(nvps(s), 4) == pytest.approx(2.5)
    assert nvps([s, s]) == 2 * nvps(s)
