"""Finite-difference weights and their low-rank MPO form.

Shift operators ``(S_k v)[i] = v[i + k]`` are built as binary adders: the bond
carries the carry bit from the least significant site (last) to the most
significant one (first), so every shift has bond dimension 2 regardless of
``k`` and ``n``. Stencils are sums of shifts plus sparse boundary-row
corrections, compressed after assembly.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .core import (
    TensorTrainOperator,
    compress_operator,
    identity_operator,
    kron_operators,
    scale_add_operators,
)
from .core.truncation import TruncationPolicy

BOUNDARIES = ("dirichlet", "periodic", "symmetry", "onesided")
# Operators are exact up to rounding; this drops only floating point noise.
OPERATOR_POLICY = TruncationPolicy(cutoff=1e-13)


def fd_weights(offsets, derivative: int) -> np.ndarray:
    """Weights ``w`` with ``sum_k w_k f(x + o_k h) = h^d f^(d)(x) + O(h^{len-d})``.

    Solved exactly in rational arithmetic.
    """
    offsets = [Fraction(o) for o in offsets]
    m = len(offsets)
    if derivative >= m:
        raise ValueError("need more nodes than the derivative order")
    # Vandermonde system: sum_k w_k o_k^p = d! delta_{p,d}
    a = [[o**p for o in offsets] for p in range(m)]
    b = [Fraction(0)] * m
    fact = 1
    for q in range(2, derivative + 1):
        fact *= q
    b[derivative] = Fraction(fact)
    # Gaussian elimination over the rationals
    for col in range(m):
        piv = next(r for r in range(col, m) if a[r][col] != 0)
        a[col], a[piv] = a[piv], a[col]
        b[col], b[piv] = b[piv], b[col]
        for r in range(m):
            if r != col and a[r][col] != 0:
                f = a[r][col] / a[col][col]
                a[r] = [x - f * y for x, y in zip(a[r], a[col])]
                b[r] -= f * b[col]
    return np.array([float(b[k] / a[k][k]) for k in range(m)])


def central_weights(derivative: int, accuracy: int) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and weights of the centered stencil of even order ``accuracy``."""
    if accuracy <= 0 or accuracy % 2:
        raise ValueError(f"accuracy must be a positive even integer, got {accuracy}")
    if derivative not in (1, 2):
        raise ValueError("only first and second derivatives are supported")
    half = accuracy // 2
    offsets = np.arange(-half, half + 1)
    return offsets, fd_weights(offsets, derivative)


@dataclass(frozen=True)
class StencilSpec:
    """Finite-difference stencil along one grid axis."""

    derivative_order: int = 1
    accuracy: int = 2
    direction: str = "x"
    boundary: str = "dirichlet"
    spacing: float = 1.0

    def __post_init__(self):
        if self.derivative_order not in (1, 2):
            raise ValueError("derivative_order must be 1 or 2")
        if self.accuracy not in (2, 4, 6):
            raise ValueError(f"unsupported accuracy {self.accuracy}; expected 2, 4 or 6")
        if self.direction not in ("x", "y"):
            raise ValueError("direction must be 'x' or 'y'")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")


def _boundary_rows(size: int, spec: StencilSpec) -> dict[int, dict[int, float]]:
    """Rows that differ from the plain shift sum, as ``{row: {col: weight}}``.

    The entries are the full desired row; the caller subtracts what the
    (Dirichlet-truncated) shift sum already contributes.
    """
    offsets, weights = central_weights(spec.derivative_order, spec.accuracy)
    half = int(offsets[-1])
    rows: dict[int, dict[int, float]] = {}
    if spec.boundary == "symmetry":
        for i in range(min(half, size)):
            row: dict[int, float] = {}
            for o, w in zip(offsets, weights):
                j = abs(i + o)
                if j < size:
                    row[j] = row.get(j, 0.0) + w
            rows[i] = row
    elif spec.boundary == "onesided":
        npts = spec.accuracy + spec.derivative_order
        if npts > size:
            raise ValueError("grid too small for the one-sided closure")
        for i in range(min(half, size)):
            nodes = np.arange(npts)
            w = fd_weights(nodes - i, spec.derivative_order)
            rows[i] = {int(j): float(x) for j, x in zip(nodes, w)}
            k = size - 1 - i
            nodes_r = np.arange(size - npts, size)
            w = fd_weights(nodes_r - k, spec.derivative_order)
            rows[k] = {int(j): float(x) for j, x in zip(nodes_r, w)}
    return rows


def stencil_matrix(size: int, spec: StencilSpec) -> sp.csr_matrix:
    """Sparse banded matrix of the stencil with its boundary closure (dense oracle side)."""
    offsets, weights = central_weights(spec.derivative_order, spec.accuracy)
    m = sp.lil_matrix((size, size))
    for i in range(size):
        for o, w in zip(offsets, weights):
            j = i + int(o)
            if spec.boundary == "periodic":
                m[i, j % size] += w
            elif 0 <= j < size:
                m[i, j] += w
    for i, row in _boundary_rows(size, spec).items():
        m[i, :] = 0.0
        for j, w in row.items():
            m[i, j] += w
    return (m.tocsr() / spec.spacing**spec.derivative_order).tocsr()


def shift_mpo(n: int, k: int, periodic: bool = False) -> TensorTrainOperator:
    """``(S v)[i] = v[i + k]``; out-of-range entries vanish unless ``periodic``."""
    size = 1 << n
    if not periodic and abs(k) >= size:
        return identity_operator(n) * 0.0
    kk = k % size
    cores = []
    for m in range(n):
        bit = (kk >> (n - 1 - m)) & 1
        w = np.zeros((2, 2, 2, 2))
        for i in range(2):
            for c_in in range(2):
                tot = i + bit + c_in
                w[tot // 2, i, tot % 2, c_in] = 1.0
        cores.append(w)
    cores[-1] = cores[-1][:, :, :, :1]
    if periodic:
        cores[0] = cores[0].sum(axis=0, keepdims=True)
    else:
        # non-negative shifts must not overflow; negative ones (added as
        # size - |k|) must overflow exactly once
        keep = 0 if k >= 0 else 1
        cores[0] = cores[0][keep:keep + 1]
    return TensorTrainOperator(tuple(cores))


def matrix_element_mpo(n: int, row: int, col: int, value: complex = 1.0) -> TensorTrainOperator:
    """Bond-1 operator ``value |row><col|``."""
    cores = []
    for m in range(n):
        c = np.zeros((1, 2, 2, 1))
        c[0, (row >> (n - 1 - m)) & 1, (col >> (n - 1 - m)) & 1, 0] = 1.0
        cores.append(c)
    op = TensorTrainOperator(tuple(cores))
    return op * value


def fd_mpo(spec: StencilSpec, n: int, policy: TruncationPolicy = OPERATOR_POLICY) -> TensorTrainOperator:
    """Stencil operator on ``n`` sites of a single axis."""
    size = 1 << n
    offsets, weights = central_weights(spec.derivative_order, spec.accuracy)
    if 2 * int(offsets[-1]) + 1 > size:
        raise ValueError(f"{size} points cannot hold a width-{len(offsets)} stencil")
    periodic = spec.boundary == "periodic"
    terms = [(w, shift_mpo(n, int(o), periodic)) for o, w in zip(offsets, weights)]
    op = terms[0][1] * terms[0][0]
    for w, s in terms[1:]:
        op = scale_add_operators(1.0, op, w, s, policy)
    # sparse corrections where the closure differs from the truncated shift sum
    for i, row in _boundary_rows(size, spec).items():
        current = {}
        for o, w in zip(offsets, weights):
            j = i + int(o)
            if 0 <= j < size:
                current[j] = current.get(j, 0.0) + w
        for j in set(row) | set(current):
            delta = row.get(j, 0.0) - current.get(j, 0.0)
            if abs(delta) > 1e-15:
                op = scale_add_operators(1.0, op, delta, matrix_element_mpo(n, i, j), policy)
    op = compress_operator(op, policy)
    return op * (1.0 / spec.spacing**spec.derivative_order)


def embed_axis(op: TensorTrainOperator, direction: str, axis_split) -> TensorTrainOperator:
    """Lift a one-axis operator to the 2D layout (y digits first, then x digits)."""
    nx, ny = axis_split
    if direction == "x":
        if op.n != nx:
            raise ValueError("operator size does not match n_x")
        return kron_operators(identity_operator(ny), op) if ny else op
    if op.n != ny:
        raise ValueError("operator size does not match n_y")
    return kron_operators(op, identity_operator(nx)) if nx else op


def fd_mpo_2d(spec: StencilSpec, axis_split, policy: TruncationPolicy = OPERATOR_POLICY) -> TensorTrainOperator:
    nx, ny = axis_split
    n_axis = nx if spec.direction == "x" else ny
    return embed_axis(fd_mpo(spec, n_axis, policy), spec.direction, axis_split)


def embed_matrix_axis(m: sp.spmatrix, direction: str, axis_split) -> sp.csr_matrix:
    """Dense-oracle counterpart of :func:`embed_axis`."""
    nx, ny = axis_split
    if direction == "x":
        return sp.kron(sp.identity(1 << ny), m, format="csr")
    return sp.kron(m, sp.identity(1 << nx), format="csr")
