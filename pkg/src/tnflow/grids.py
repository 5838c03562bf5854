"""Body-fitted O-grids in tensor-train form.

Grid index space: ``xi`` runs around the body (sites of the x axis), ``eta``
runs outward from the surface (sites of the y axis). Fields are stored as
``F[i_eta, i_xi]``. Metric terms are derivatives with respect to the integer
indices (unit computational spacing).

Surface and far-field curves are ordered clockwise so that the Jacobian
``x_xi y_eta - x_eta y_xi`` is positive with ``eta`` pointing away from the body.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import TensorTrainState, apply_operator, decode_grid, encode_state, pointwise_multiply, truncate
from .core.truncation import TruncationPolicy
from .stencils import StencilSpec, fd_mpo_2d

GRID_POLICY = TruncationPolicy(cutoff=1e-15)


class GridFoldError(ValueError):
    """The mapping is not bijective: the Jacobian is non-positive somewhere."""


class GridConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class CurvilinearGrid:
    n_xi: int
    n_eta: int
    x: TensorTrainState
    y: TensorTrainState
    x_xi: TensorTrainState
    x_eta: TensorTrainState
    y_xi: TensorTrainState
    y_eta: TensorTrainState
    jac: TensorTrainState
    inv_jac: TensorTrainState
    periodic_xi: bool = True
    geometry: str = "custom"
    method: str = "transfinite"
    # coordinates kept from generation; decoded from the MPS when absent
    offline: tuple | None = None

    @property
    def axis_split(self) -> tuple[int, int]:
        return (self.n_xi, self.n_eta)

    @property
    def shape(self) -> tuple[int, int]:
        return (1 << self.n_eta, 1 << self.n_xi)

    @property
    def chi_met(self) -> int:
        return max(s.max_bond for s in (self.x_xi, self.x_eta, self.y_xi, self.y_eta, self.jac))

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        if self.offline is not None:
            return self.offline[0].copy(), self.offline[1].copy()
        return decode_grid(self.x), decode_grid(self.y)

    def xi_boundary(self) -> str:
        return "periodic" if self.periodic_xi else "onesided"

    def manifest(self) -> dict:
        return {"n_xi": self.n_xi, "n_eta": self.n_eta, "geometry": self.geometry,
                "method": self.method, "periodic_xi": self.periodic_xi, "chi_met": self.chi_met}


# -- boundary curves ------------------------------------------------------------

def circle_points(radius: float, count: int, center=(0.0, 0.0)) -> np.ndarray:
    """``count`` points on a circle, clockwise from angle 0."""
    th = -2.0 * math.pi * np.arange(count) / count
    return np.stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)], axis=1)


def naca0012_points(count: int, chord: float = 1.0) -> np.ndarray:
    """Closed-trailing-edge NACA 0012 section, clockwise from the trailing edge.

    Cosine clustering toward both edges; the chord midpoint sits at the origin.
    """
    beta = 2.0 * math.pi * np.arange(count) / count
    xc = 0.5 * (1.0 + np.cos(beta))
    t = 0.12
    yt = 5 * t * (0.2969 * np.sqrt(xc) - 0.1260 * xc - 0.3516 * xc**2 + 0.2843 * xc**3 - 0.1036 * xc**4)
    y = np.where(beta <= math.pi, -yt, yt)
    return np.stack([(xc - 0.5) * chord, y * chord], axis=1)


# -- metrics --------------------------------------------------------------------

def _index_ops(n_xi, n_eta, periodic_xi, accuracy=2, policy=GRID_POLICY):
    split = (n_xi, n_eta)
    d_xi = fd_mpo_2d(StencilSpec(1, accuracy, "x", "periodic" if periodic_xi else "onesided"), split, policy)
    d_eta = fd_mpo_2d(StencilSpec(1, accuracy, "y", "onesided"), split, policy)
    return d_xi, d_eta


def grid_from_arrays(X: np.ndarray, Y: np.ndarray, periodic_xi: bool = True, geometry: str = "custom",
                     method: str = "transfinite", policy: TruncationPolicy = GRID_POLICY) -> CurvilinearGrid:
    """Encode coordinates and derive metrics, Jacobian and its reciprocal.

    Metrics are obtained by applying index-space derivative MPOs to the encoded
    coordinates. ``1/J`` is evaluated pointwise on the decoded Jacobian and
    re-encoded (an offline step).
    """
    X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
    if X.shape != Y.shape or X.ndim != 2:
        raise ValueError("coordinate arrays must share a 2D shape")
    n_eta, n_xi = (int(round(math.log2(s))) for s in X.shape)
    if X.shape != (1 << n_eta, 1 << n_xi):
        raise ValueError("grid sizes must be powers of two")
    split = (n_xi, n_eta)
    xs, ys = encode_state(X.ravel(), split, policy), encode_state(Y.ravel(), split, policy)
    d_xi, d_eta = _index_ops(n_xi, n_eta, periodic_xi, policy=policy)
    x_xi, x_eta = apply_operator(d_xi, xs, policy), apply_operator(d_eta, xs, policy)
    y_xi, y_eta = apply_operator(d_xi, ys, policy), apply_operator(d_eta, ys, policy)
    jac = pointwise_multiply(x_xi, y_eta, policy) - pointwise_multiply(x_eta, y_xi, policy)
    jac = truncate(jac, policy)
    J = decode_grid(jac)
    if not np.all(J > 0):
        bad = np.argwhere(J <= 0)
        raise GridFoldError(f"Jacobian non-positive at {len(bad)} points, first (eta, xi) = {tuple(bad[0])}")
    inv = encode_state((1.0 / J).ravel(), split, policy)
    return CurvilinearGrid(n_xi, n_eta, xs, ys, x_xi, x_eta, y_xi, y_eta, jac, inv,
                           periodic_xi, geometry, method, (X.copy(), Y.copy()))


def transfinite_arrays(surface, farfield, n_eta: int) -> tuple[np.ndarray, np.ndarray]:
    surface, farfield = np.asarray(surface, dtype=float), np.asarray(farfield, dtype=float)
    if surface.shape != farfield.shape or surface.ndim != 2 or surface.shape[1] != 2:
        raise ValueError("surface and far-field curves must be (N, 2) arrays of equal length")
    s = np.arange(1 << n_eta) / ((1 << n_eta) - 1)
    X = (1 - s)[:, None] * surface[None, :, 0] + s[:, None] * farfield[None, :, 0]
    Y = (1 - s)[:, None] * surface[None, :, 1] + s[:, None] * farfield[None, :, 1]
    return X, Y


def transfinite_grid(surface, farfield, n_xi: int, n_eta: int, policy: TruncationPolicy = GRID_POLICY,
                     geometry: str = "custom") -> CurvilinearGrid:
    """Linear blend between two closed curves of ``2**n_xi`` points each."""
    surface = np.asarray(surface, dtype=float)
    if surface.shape[0] != 1 << n_xi:
        raise ValueError(f"expected {1 << n_xi} boundary points, got {surface.shape[0]}")
    X, Y = transfinite_arrays(surface, farfield, n_eta)
    return grid_from_arrays(X, Y, True, geometry, "transfinite", policy)


def cylinder_grid(n_xi: int, n_eta: int, radius: float = 0.5, outer: float = 8.0,
                  policy: TruncationPolicy = GRID_POLICY) -> CurvilinearGrid:
    count = 1 << n_xi
    return transfinite_grid(circle_points(radius, count), circle_points(outer, count), n_xi, n_eta,
                            policy, geometry=f"cylinder r={radius:g} R={outer:g}")


def naca_grid(n_xi: int, n_eta: int, outer: float = 8.0, smooth_iterations: int = 400,
              tolerance: float = 1e-8, policy: TruncationPolicy = GRID_POLICY) -> CurvilinearGrid:
    count = 1 << n_xi
    g = transfinite_grid(naca0012_points(count), circle_points(outer, count), n_xi, n_eta, policy,
                         geometry=f"naca0012 R={outer:g}")
    return elliptic_grid(g, smooth_iterations, tolerance)


def identity_grid(n_xi: int, n_eta: int, spacing: float = 1.0,
                  policy: TruncationPolicy = GRID_POLICY) -> CurvilinearGrid:
    """Cartesian mapping ``x = xi * spacing``, ``y = eta * spacing`` (not periodic)."""
    xi = np.arange(1 << n_xi) * spacing
    eta = np.arange(1 << n_eta) * spacing
    X, Y = np.meshgrid(xi, eta)
    return grid_from_arrays(X, Y, False, "identity", "analytic", policy)


# -- elliptic smoothing ---------------------------------------------------------

def _winslow_parts(X, Y):
    """Index-space metric coefficients with periodic xi, used by the smoother."""
    def d_xi(F):
        return (np.roll(F, -1, axis=1) - np.roll(F, 1, axis=1)) / 2.0

    def d_eta(F):
        out = np.zeros_like(F)
        out[1:-1] = (F[2:] - F[:-2]) / 2.0
        return out

    xx, xe, yx, ye = d_xi(X), d_eta(X), d_xi(Y), d_eta(Y)
    alpha = xe**2 + ye**2
    beta = xx * xe + yx * ye
    gamma = xx**2 + yx**2
    return alpha, beta, gamma


def _cross(F):
    return (np.roll(F, -1, axis=1)[2:] - np.roll(F, 1, axis=1)[2:]
            - np.roll(F, -1, axis=1)[:-2] + np.roll(F, 1, axis=1)[:-2]) / 4.0


def control_functions(X: np.ndarray, Y: np.ndarray, kind: str = "thomas-middlecoff") -> np.ndarray:
    """Forcing ``P(xi, eta)`` of the xi equation.

    ``"thomas-middlecoff"`` evaluates ``-(r_xi . r_xixi) / |r_xi|^2`` on the body
    and far-field rows and blends linearly in eta, so the solution keeps the
    boundary point clustering. ``"none"`` gives the plain Winslow equations.
    The eta forcing vanishes for the linear eta distribution of the start grid.
    """
    if kind == "none":
        return np.zeros_like(X)
    if kind != "thomas-middlecoff":
        raise ValueError(f"unknown control functions {kind!r}")

    def edge(row):
        x, y = X[row], Y[row]
        xx, yx = (np.roll(x, -1) - np.roll(x, 1)) / 2.0, (np.roll(y, -1) - np.roll(y, 1)) / 2.0
        xxx, yxx = np.roll(x, -1) - 2 * x + np.roll(x, 1), np.roll(y, -1) - 2 * y + np.roll(y, 1)
        return -(xx * xxx + yx * yxx) / (xx**2 + yx**2)

    s = np.linspace(0.0, 1.0, X.shape[0])[:, None]
    return (1 - s) * edge(0)[None, :] + s * edge(-1)[None, :]


def winslow_residual(X: np.ndarray, Y: np.ndarray, P: np.ndarray | None = None) -> float:
    """Max interior residual of ``alpha (F_xixi + P F_xi) - 2 beta F_xieta + gamma F_etaeta = 0``.

    Normalized by ``2 (alpha + gamma)`` so it measures a point displacement.
    """
    a, b, g = (t[1:-1] for t in _winslow_parts(X, Y))
    p = 0.0 if P is None else P[1:-1]
    out = 0.0
    for F in (X, Y):
        fx = (np.roll(F, -1, axis=1)[1:-1] - np.roll(F, 1, axis=1)[1:-1]) / 2.0
        fxx = np.roll(F, -1, axis=1)[1:-1] - 2 * F[1:-1] + np.roll(F, 1, axis=1)[1:-1]
        fee = F[2:] - 2 * F[1:-1] + F[:-2]
        r = (a * (fxx + p * fx) - 2 * b * _cross(F) + g * fee) / (2 * (a + g))
        out = max(out, float(np.max(np.abs(r))))
    return out


def _winslow_matrix(a, b, g, P):
    """Frozen-coefficient operator on the interior rows, with the boundary rows split off.

    Returns ``(A, B0, B1)`` such that the discrete equations read
    ``A F_int + B0 F[0] + B1 F[-1] = 0`` for either coordinate.
    """
    rows, cols = a.shape
    idx = np.arange(rows * cols).reshape(rows, cols)
    ip, im, same = np.roll(np.arange(cols), -1), np.roll(np.arange(cols), 1), np.arange(cols)
    stencil = [(0, ip, a * (1 + P / 2)), (0, im, a * (1 - P / 2)), (0, same, -2 * (a + g)),
               (1, same, g), (-1, same, g),
               (1, ip, -b / 2), (1, im, b / 2), (-1, ip, b / 2), (-1, im, -b / 2)]
    j = np.broadcast_to(np.arange(rows)[:, None], (rows, cols))
    inner, lower, upper = ([], [], []), ([], [], []), ([], [], [])
    for dj, col, w in stencil:
        col = np.broadcast_to(col, (rows, cols))
        tgt = j + dj
        for dest, m, target in ((inner, (tgt >= 0) & (tgt < rows), tgt * cols + col),
                                (lower, tgt < 0, col), (upper, tgt >= rows, col)):
            dest[0].append(idx[m])
            dest[1].append(target[m])
            dest[2].append(w[m])

    def build(parts, width, fmt):
        r, c, v = (np.concatenate(x) for x in parts)
        return sp.coo_matrix((v, (r, c)), shape=(rows * cols, width)).asformat(fmt)

    return build(inner, rows * cols, "csc"), build(lower, cols, "csr"), build(upper, cols, "csr")


def elliptic_grid(initial: CurvilinearGrid, iterations: int = 400, tolerance: float = 1e-8,
                  omega: float = 0.15, control: str = "thomas-middlecoff",
                  policy: TruncationPolicy = GRID_POLICY) -> CurvilinearGrid:
    """Relax interior points toward the solution of the elliptic grid equations.

    Boundaries stay fixed. Every iteration freezes ``alpha, beta, gamma`` and
    solves the linear system for both coordinates (Picard iteration), then
    moves the interior by ``omega`` times the correction. ``control`` selects
    the forcing (:func:`control_functions`). Raises
    :class:`GridConvergenceError` when ``tolerance`` is not reached and
    :class:`GridFoldError` if the converged grid folds.
    """
    if not initial.periodic_xi:
        raise ValueError("elliptic smoothing expects an O-grid (periodic xi)")
    if not 0 < omega <= 1:
        raise ValueError("omega must lie in (0, 1]")
    X, Y = (a.copy() for a in initial.coords())
    P = control_functions(X, Y, control)
    res = winslow_residual(X, Y, P)
    for _ in range(iterations):
        if res <= tolerance:
            break
        a, b, g = (t[1:-1] for t in _winslow_parts(X, Y))
        A, B0, B1 = _winslow_matrix(a, b, g, P[1:-1])
        try:
            lu = spla.splu(A)
        except RuntimeError as exc:
            raise GridConvergenceError(f"singular smoothing system: {exc}") from exc
        for F in (X, Y):
            sol = lu.solve(-(B0 @ F[0] + B1 @ F[-1]))
            F[1:-1] += omega * (sol.reshape(F[1:-1].shape) - F[1:-1])
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise GridConvergenceError("elliptic smoothing diverged")
        res = winslow_residual(X, Y, P)
    if res > tolerance:
        raise GridConvergenceError(f"elliptic residual {res:.3e} above tolerance {tolerance:.1e}")
    return grid_from_arrays(X, Y, True, initial.geometry, "elliptic", policy)


def orthogonality_deviation(grid: CurvilinearGrid, rows: int = 3) -> float:
    """Mean ``|cos|`` of the angle between xi and eta lines over the first ``rows`` rows."""
    xx, xe = decode_grid(grid.x_xi), decode_grid(grid.x_eta)
    yx, ye = decode_grid(grid.y_xi), decode_grid(grid.y_eta)
    dot = xx * xe + yx * ye
    c = np.abs(dot) / (np.hypot(xx, yx) * np.hypot(xe, ye))
    return float(np.mean(c[:rows]))


def min_spacing(grid: CurvilinearGrid) -> float:
    """Smallest distance between neighbouring grid points."""
    X, Y = grid.coords()
    dxi = np.hypot(np.diff(X, axis=1), np.diff(Y, axis=1))
    deta = np.hypot(np.diff(X, axis=0), np.diff(Y, axis=0))
    vals = [dxi.min(), deta.min()]
    if grid.periodic_xi:
        vals.append(np.hypot(X[:, 0] - X[:, -1], Y[:, 0] - Y[:, -1]).min())
    return float(min(vals))


def with_method(grid: CurvilinearGrid, method: str) -> CurvilinearGrid:
    return replace(grid, method=method)
