"""Physical-space differential operators on a curvilinear grid, as MPOs.

Derivatives follow the chain rule through the grid metrics::

    d/dx = (1/J) [ y_eta d/dxi - y_xi d/deta ]
    d/dy = (1/J) [ x_xi d/deta - x_eta d/dxi ]

The Laplacian uses the expanded second-order form with the coefficient
fields ``alpha = x_eta^2 + y_eta^2``, ``beta = x_xi x_eta + y_xi y_eta`` and
``gamma = x_xi^2 + y_xi^2``. The first-derivative operators are composed
from the encoded metrics; the Laplacian coefficients are evaluated pointwise
on the generated coordinates and encoded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import TensorTrainOperator, compose_operators, diag_operator, encode_state, sum_operators
from .core.truncation import TruncationPolicy
from .grids import CurvilinearGrid
from .stencils import StencilSpec, embed_matrix_axis, fd_mpo_2d, stencil_matrix

CURVI_POLICY = TruncationPolicy(cutoff=1e-15)


@dataclass(frozen=True, eq=False)
class CurvilinearOperators:
    d_xi: TensorTrainOperator
    d_eta: TensorTrainOperator
    dx: TensorTrainOperator
    dy: TensorTrainOperator
    lap: TensorTrainOperator

    @property
    def zeta_lap(self) -> int:
        return self.lap.max_bond

    def bonds(self) -> dict:
        return {"d_xi": self.d_xi.max_bond, "d_eta": self.d_eta.max_bond, "dx": self.dx.max_bond,
                "dy": self.dy.max_bond, "lap": self.lap.max_bond}


def index_derivatives(grid: CurvilinearGrid, order: int, accuracy: int = 2,
                      policy: TruncationPolicy = CURVI_POLICY):
    split = grid.axis_split
    xi = fd_mpo_2d(StencilSpec(order, accuracy, "x", grid.xi_boundary()), split, policy)
    eta = fd_mpo_2d(StencilSpec(order, accuracy, "y", "onesided"), split, policy)
    return xi, eta


# Coefficient fields whose peak is below this fraction of the largest one are
# finite-difference roundoff (e.g. the cross term on an orthogonal grid).
ROUNDOFF_DROP = 1e-12


def laplacian_coefficient_arrays(X: np.ndarray, Y: np.ndarray, periodic_xi: bool, accuracy: int = 2) -> dict:
    """Coefficients of ``f_xixi, f_xieta, f_etaeta, f_xi, f_eta`` in the Laplacian.

    Evaluated pointwise on the coordinate arrays: the fields involve ``1/J^2``
    and ``1/J^3``, and the metric differences lose precision near a body when
    taken through truncated MPS arithmetic.
    """
    n_eta, n_xi = (int(np.log2(s)) for s in X.shape)
    split = (n_xi, n_eta)
    bxi = "periodic" if periodic_xi else "onesided"

    def op(order, axis, boundary):
        n_axis = n_xi if axis == "x" else n_eta
        return embed_matrix_axis(stencil_matrix(1 << n_axis, StencilSpec(order, accuracy, axis, boundary)),
                                 axis, split)

    d_xi, d_eta = op(1, "x", bxi), op(1, "y", "onesided")
    d_xixi, d_etaeta = op(2, "x", bxi), op(2, "y", "onesided")
    x, y = X.ravel(), Y.ravel()
    xx, xe, yx, ye = d_xi @ x, d_eta @ x, d_xi @ y, d_eta @ y
    J = xx * ye - xe * yx
    alpha, beta, gamma = xe**2 + ye**2, xx * xe + yx * ye, xx**2 + yx**2

    def second(f):
        return alpha * (d_xixi @ f) - 2 * beta * (d_xi @ (d_eta @ f)) + gamma * (d_etaeta @ f)

    X2, Y2 = second(x), second(y)
    return {
        "xixi": alpha / J**2,
        "xieta": -2 * beta / J**2,
        "etaeta": gamma / J**2,
        "xi": (Y2 * xe - X2 * ye) / J**3,
        "eta": (X2 * yx - Y2 * xx) / J**3,
    }


def laplacian_coefficients(grid: CurvilinearGrid, policy: TruncationPolicy = CURVI_POLICY,
                           accuracy: int = 2) -> dict:
    """Encoded coefficient fields; roundoff-level terms are omitted."""
    X, Y = grid.coords()
    arrays = laplacian_coefficient_arrays(X, Y, grid.periodic_xi, accuracy)
    top = max(float(np.abs(v).max()) for v in arrays.values())
    return {k: encode_state(v, grid.axis_split, policy) for k, v in arrays.items()
            if np.abs(v).max() > ROUNDOFF_DROP * top}


def build_curvilinear_operators(grid: CurvilinearGrid, accuracy: int = 2,
                                policy: TruncationPolicy = CURVI_POLICY) -> CurvilinearOperators:
    d_xi, d_eta = index_derivatives(grid, 1, accuracy, policy)
    d_xixi, d_etaeta = index_derivatives(grid, 2, accuracy, policy)
    jinv = diag_operator(grid.inv_jac)

    def chain(c_xi, op_xi, c_eta, op_eta):
        inner = sum_operators([(1.0, compose_operators(diag_operator(c_xi), op_xi, policy)),
                               (1.0, compose_operators(diag_operator(c_eta), op_eta, policy))], policy)
        return compose_operators(jinv, inner, policy)

    dx = chain(grid.y_eta, d_xi, -grid.y_xi, d_eta)
    dy = chain(-grid.x_eta, d_xi, grid.x_xi, d_eta)
    co = laplacian_coefficients(grid, policy, accuracy)
    by_term = {"xixi": d_xixi, "etaeta": d_etaeta, "xi": d_xi, "eta": d_eta}
    if "xieta" in co:
        by_term["xieta"] = compose_operators(d_xi, d_eta, policy)
    lap = sum_operators([(1.0, compose_operators(diag_operator(c), by_term[k], policy)) for k, c in co.items()],
                        policy)
    return CurvilinearOperators(d_xi, d_eta, dx, dy, lap)


# -- sparse counterparts built directly from coordinate arrays ----------------

@dataclass(frozen=True)
class SparseCurvilinear:
    """Sparse-matrix operators from the decoded coordinates (independent of the MPO path)."""

    d_xi: sp.csr_matrix
    d_eta: sp.csr_matrix
    dx: sp.csr_matrix
    dy: sp.csr_matrix
    lap: sp.csr_matrix
    metrics: dict


def sparse_operators(X: np.ndarray, Y: np.ndarray, periodic_xi: bool, accuracy: int = 2) -> SparseCurvilinear:
    n_eta, n_xi = (int(np.log2(s)) for s in X.shape)
    split = (n_xi, n_eta)
    bxi = "periodic" if periodic_xi else "onesided"

    def op(order, axis, boundary):
        n_axis = n_xi if axis == "x" else n_eta
        return embed_matrix_axis(stencil_matrix(1 << n_axis, StencilSpec(order, accuracy, axis, boundary)),
                                 axis, split)

    d_xi, d_eta = op(1, "x", bxi), op(1, "y", "onesided")
    d_xixi, d_etaeta = op(2, "x", bxi), op(2, "y", "onesided")
    x, y = X.ravel(), Y.ravel()
    xx, xe, yx, ye = d_xi @ x, d_eta @ x, d_xi @ y, d_eta @ y
    J = xx * ye - xe * yx
    D = sp.diags
    dx = D(1 / J) @ (D(ye) @ d_xi - D(yx) @ d_eta)
    dy = D(1 / J) @ (D(xx) @ d_eta - D(xe) @ d_xi)
    alpha, beta, gamma = xe**2 + ye**2, xx * xe + yx * ye, xx**2 + yx**2
    mixed = d_xi @ d_eta

    def second(f):
        return alpha * (d_xixi @ f) - 2 * beta * (mixed @ f) + gamma * (d_etaeta @ f)

    X2, Y2 = second(x), second(y)
    lap = (D(alpha / J**2) @ d_xixi - D(2 * beta / J**2) @ mixed + D(gamma / J**2) @ d_etaeta
           + D((Y2 * xe - X2 * ye) / J**3) @ d_xi + D((X2 * yx - Y2 * xx) / J**3) @ d_eta)
    metrics = {"x_xi": xx, "x_eta": xe, "y_xi": yx, "y_eta": ye, "jac": J}
    return SparseCurvilinear(d_xi.tocsr(), d_eta.tocsr(), dx.tocsr(), dy.tocsr(), lap.tocsr(), metrics)
