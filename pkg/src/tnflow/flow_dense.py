"""Sparse-matrix reference for the projection scheme in :mod:`tnflow.flow`.

Built from coordinate arrays with scipy.sparse, sharing no operator code with
the MPS path beyond the 1D stencil tables. The pressure equation is solved by
a bordered LU factorization that fixes the null-space components to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .curvilinear import sparse_operators
from .flow import (FlowParams, boundary_arrays, null_vector_arrays, pressure_rows_array,
                   velocity_mask_array, wall_pressure)
from .grids import CurvilinearGrid


@dataclass
class DenseFlowState:
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    t: float = 0.0
    step: int = 0

    def fields(self) -> dict:
        return {"u": self.u.copy(), "v": self.v.copy(), "p": self.p.copy()}


class DenseFlow:
    def __init__(self, X: np.ndarray, Y: np.ndarray, params: FlowParams, grid_like: CurvilinearGrid):
        self.shape = X.shape
        self.params = params
        if params.dt is None:
            raise ValueError("dense reference needs an explicit dt")
        self.dt = params.dt
        ops = sparse_operators(X, Y, grid_like.periodic_xi)
        self.dx, self.dy, self.lap = ops.dx, ops.dy, ops.lap
        m = ops.metrics
        n_eta = self.shape[0]
        size = X.size
        # backward neighbour in eta (zero beyond the first row)
        back_1d = sp.diags([np.ones(n_eta - 1)], [-1], shape=(n_eta, n_eta))
        back = sp.kron(back_1d, sp.identity(self.shape[1]), format="csr")
        ident = sp.identity(size, format="csr")
        avg, diff = 0.5 * (ident + back), ident - back
        rows = sp.diags(pressure_rows_array(grid_like).ravel())
        vel = sp.diags(velocity_mask_array(grid_like).ravel())
        jinv = sp.diags(1.0 / m["jac"])
        D = sp.diags
        self.bx = (rows @ (ops.d_xi @ avg @ D(m["y_eta"]) - diff @ D(m["y_xi"]))).tocsr()
        self.by = (rows @ (-ops.d_xi @ avg @ D(m["x_eta"]) + diff @ D(m["x_xi"]))).tocsr()
        self.gx = (-(vel @ jinv @ self.bx.T)).tocsr()
        self.gy = (-(vel @ jinv @ self.by.T)).tocsr()
        K = -(self.bx @ self.gx + self.by @ self.gy) + (ident - rows)
        self.null = [a.ravel() for a in null_vector_arrays(grid_like)]
        if self.null:
            N = sp.csr_matrix(np.stack(self.null, axis=1))
            z = sp.csr_matrix((len(self.null), len(self.null)))
            K = sp.bmat([[K, N], [N.T, z]], format="csc")
        self.K = K.tocsc()
        self.lu = spla.splu(self.K)
        self.mask = velocity_mask_array(grid_like).ravel()
        ub, vb = boundary_arrays(grid_like, params)
        self.u_bc, self.v_bc = ub.ravel(), vb.ravel()

    def initial_state(self) -> DenseFlowState:
        return DenseFlowState(self.u_bc.copy(), self.v_bc.copy(), np.zeros(self.u_bc.size))

    def divergence(self, u, v) -> np.ndarray:
        return self.bx @ u + self.by @ v

    def step(self, s: DenseFlowState) -> DenseFlowState:
        prm, dt = self.params, self.dt

        def predict(q, q_bc):
            new = q + dt * (prm.nu * (self.lap @ q) - s.u * (self.dx @ q) - s.v * (self.dy @ q))
            return self.mask * new + (1 - self.mask) * q_bc

        us, vs = predict(s.u, self.u_bc), predict(s.v, self.v_bc)
        rhs = -(prm.rho / dt) * self.divergence(us, vs)
        for nv in self.null:
            rhs = rhs - (nv @ rhs) / (nv @ nv) * nv
        full = np.concatenate([rhs, np.zeros(len(self.null))])
        p = self.lu.solve(full)[: rhs.size]
        c = dt / prm.rho
        return DenseFlowState(us - c * (self.gx @ p), vs - c * (self.gy @ p), p, s.t + dt, s.step + 1)

    def relative_divergence(self, s: DenseFlowState) -> float:
        return float(np.linalg.norm(self.divergence(s.u, s.v)) / math.hypot(np.linalg.norm(s.u), np.linalg.norm(s.v)))

    def grid_fields(self, s: DenseFlowState) -> dict:
        return {k: v.reshape(self.shape) for k, v in s.fields().items()}

    def run(self, steps: int, state: DenseFlowState | None = None, sample_every: int = 0,
            steady_tol: float | None = None, steady_count: int = 10):
        s = state if state is not None else self.initial_state()
        samples, quiet = [], 0
        for _ in range(steps):
            new = self.step(s)
            if sample_every and new.step % sample_every == 0:
                samples.append({"step": new.step, "t": new.t, **self.grid_fields(new)})
            if steady_tol is not None:
                du = math.hypot(np.linalg.norm(new.u - s.u), np.linalg.norm(new.v - s.v))
                den = math.hypot(np.linalg.norm(s.u), np.linalg.norm(s.v))
                quiet = quiet + 1 if du <= steady_tol * den else 0
            s = new
            if steady_tol is not None and quiet >= steady_count:
                break
        return s, samples

    def wall_pressure(self, s: DenseFlowState) -> np.ndarray:
        return wall_pressure(s.p.reshape(self.shape))


def dense_flow_for(grid: CurvilinearGrid, params: FlowParams) -> DenseFlow:
    X, Y = grid.coords()
    return DenseFlow(X, Y, params, grid)
