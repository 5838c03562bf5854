"""Chorin projection for incompressible flow on a body-fitted O-grid, in MPS form.

Velocities live on grid nodes. Pressure lives on half-rows ``eta - 1/2``
(row ``j`` of the pressure field holds ``p(xi, j - 1/2)``; row 0 is unused
and held at zero). The discrete divergence is the conservative flux form::

    J div(u) = d_xi(y_eta u - x_eta v) + d_eta(x_xi v - y_xi u)

with ``d_eta`` a backward difference onto half-rows and the ``d_xi`` term
averaged onto them. The pressure gradient is minus the weighted adjoint of
that divergence, so the pressure operator ``K = -B G`` is symmetric positive
semidefinite and a projected field has zero discrete divergence up to the
linear-solver residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (TensorTrainOperator, TensorTrainState, apply_operator, compose_operators,
                   decode_grid, diag_operator, encode_state, identity_operator, inner,
                   linear_combination, norm, pointwise_multiply, sum_operators, transpose)
from .core.solvers import SolveResult, als_solve
from .core.truncation import TruncationPolicy
from .curvilinear import CURVI_POLICY, CurvilinearOperators, build_curvilinear_operators
from .grids import CurvilinearGrid, min_spacing
from .stencils import embed_axis, shift_mpo


ROUNDOFF_DIVERGENCE = 1e-14


class CFLViolation(ValueError):
    pass


class PoissonFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class FlowParams:
    rho: float = 1.0
    nu: float = 0.05
    u_inf: float = 1.0
    dt: float | None = None  # None: derived from the grid
    no_slip: bool = True


@dataclass(frozen=True)
class PoissonConfig:
    max_bond: int | None = None
    cutoff: float = 1e-14
    tol: float = 1e-10
    sweeps: int = 30
    patience: int = 3
    sigma: float = 1.0  # weight of the null-space penalty
    strict: bool = True  # False: accept a bond-limited residual

    def policy(self) -> TruncationPolicy:
        if self.max_bond is None:
            return TruncationPolicy(cutoff=self.cutoff)
        return TruncationPolicy(max_bond=self.max_bond, cutoff=self.cutoff)


@dataclass(frozen=True, eq=False)
class FlowState:
    u: TensorTrainState
    v: TensorTrainState
    p: TensorTrainState
    t: float = 0.0
    step: int = 0

    def fields(self) -> dict:
        return {"u": decode_grid(self.u), "v": decode_grid(self.v), "p": decode_grid(self.p)}


@dataclass(frozen=True)
class StepInfo:
    poisson_residual: float
    poisson_sweeps: int
    divergence: float
    bonds: dict = field(default_factory=dict)


def stable_dt(grid: CurvilinearGrid, params: FlowParams) -> float:
    ds = min_spacing(grid)
    return 0.25 * min(ds * ds / params.nu, ds / params.u_inf)


def check_cfl(grid: CurvilinearGrid, params: FlowParams, dt: float) -> None:
    ds = min_spacing(grid)
    lim_diff = 0.5 * ds * ds / params.nu
    lim_adv = ds / params.u_inf
    if dt > lim_diff:
        raise CFLViolation(f"dt={dt:.4g} exceeds diffusive limit ds^2/(2 nu)={lim_diff:.4g}")
    if dt > lim_adv:
        raise CFLViolation(f"dt={dt:.4g} exceeds advective limit ds/U={lim_adv:.4g}")


# -- masks and boundary data ----------------------------------------------------

def _field(values: np.ndarray, grid: CurvilinearGrid) -> TensorTrainState:
    return encode_state(np.asarray(values, dtype=float).ravel(), grid.axis_split, TruncationPolicy.exact())


def velocity_mask_array(grid: CurvilinearGrid) -> np.ndarray:
    m = np.zeros(grid.shape)
    if grid.periodic_xi:
        m[1:-1, :] = 1.0
    else:
        m[1:-1, 1:-1] = 1.0
    return m


def pressure_rows_array(grid: CurvilinearGrid) -> np.ndarray:
    m = np.ones(grid.shape)
    m[0] = 0.0
    return m


def boundary_arrays(grid: CurvilinearGrid, params: FlowParams) -> tuple[np.ndarray, np.ndarray]:
    """Velocity values imposed outside the interior mask (also the initial state)."""
    u = np.full(grid.shape, params.u_inf)
    if grid.periodic_xi and params.no_slip:
        u[0] = 0.0
    return u, np.zeros(grid.shape)


def null_vector_arrays(grid: CurvilinearGrid) -> list[np.ndarray]:
    """Pressure modes the projection cannot see: constants and, for periodic xi, the xi sawtooth."""
    if not grid.periodic_xi:
        return []
    rows = pressure_rows_array(grid)
    saw = np.where(np.arange(grid.shape[1]) % 2 == 0, 1.0, -1.0)[None, :] * rows
    return [rows, saw]


# -- projection operators -------------------------------------------------------

def _outer(a: TensorTrainState, b: TensorTrainState) -> TensorTrainOperator:
    cores = []
    for k, (x, y) in enumerate(zip(a.cores, b.cores)):
        c = np.einsum("lsr,LtR->lLstrR", x, y.conj())
        c = c.reshape(x.shape[0] * y.shape[0], 2, 2, x.shape[2] * y.shape[2])
        if k == 0:
            c = c * (a.prefactor * np.conj(b.prefactor))
        cores.append(c)
    return TensorTrainOperator(tuple(cores))


@dataclass(frozen=True, eq=False)
class ProjectionOperators:
    bx: TensorTrainOperator  # divergence parts onto pressure rows
    by: TensorTrainOperator
    gx: TensorTrainOperator  # pressure gradient onto interior velocity nodes
    gy: TensorTrainOperator
    K: TensorTrainOperator   # regularized pressure operator
    null: tuple = ()

    def bonds(self) -> dict:
        return {"bx": self.bx.max_bond, "by": self.by.max_bond, "gx": self.gx.max_bond,
                "gy": self.gy.max_bond, "K": self.K.max_bond}


def build_projection(grid: CurvilinearGrid, ops: CurvilinearOperators, sigma: float = 1.0,
                     policy: TruncationPolicy = CURVI_POLICY) -> ProjectionOperators:
    split = grid.axis_split
    n = sum(split)
    back = embed_axis(shift_mpo(grid.n_eta, -1), "y", split)
    ident = identity_operator(n)
    avg = sum_operators([(0.5, ident), (0.5, back)], policy)
    diff = sum_operators([(1.0, ident), (-1.0, back)], policy)
    xi_avg = compose_operators(ops.d_xi, avg, policy)
    rows = diag_operator(_field(pressure_rows_array(grid), grid))
    vel = diag_operator(_field(velocity_mask_array(grid), grid))

    def div_part(c_xi, c_eta):
        t = sum_operators([(1.0, compose_operators(xi_avg, diag_operator(c_xi), policy)),
                           (1.0, compose_operators(diff, diag_operator(c_eta), policy))], policy)
        return compose_operators(rows, t, policy)

    bx = div_part(grid.y_eta, -grid.y_xi)
    by = div_part(-grid.x_eta, grid.x_xi)
    weight = compose_operators(vel, diag_operator(grid.inv_jac), policy)

    def grad_part(b):
        return compose_operators(weight, transpose(b), policy) * -1.0

    gx, gy = grad_part(bx), grad_part(by)
    terms = [(-1.0, compose_operators(bx, gx, policy)), (-1.0, compose_operators(by, gy, policy)),
             (1.0, sum_operators([(1.0, ident), (-1.0, rows)], policy))]
    null = tuple(_field(a, grid) for a in null_vector_arrays(grid))
    for nv in null:
        terms.append((sigma / norm(nv) ** 2, _outer(nv, nv)))
    K = sum_operators(terms, policy)
    return ProjectionOperators(bx, by, gx, gy, K, null)


def remove_null(rhs: TensorTrainState, null, policy: TruncationPolicy) -> TensorTrainState:
    out = rhs
    for nv in null:
        c = inner(nv, out) / norm(nv) ** 2
        if abs(c) > 0:
            out = linear_combination([1.0, -c], [out, nv], policy)
    return out


def poisson_solve(K: TensorTrainOperator, rhs: TensorTrainState, cfg: PoissonConfig = PoissonConfig(),
                  x0: TensorTrainState | None = None) -> SolveResult:
    """ALS solve of ``K p = rhs``; the null-space handling is built into ``K``."""
    if norm(rhs) == 0:
        return SolveResult(rhs * 0.0, 0.0, 0, True)
    if x0 is not None and norm(x0) == 0:
        x0 = None
    return als_solve(K, rhs, x0, cfg.policy(), cfg.tol, cfg.sweeps, patience=cfg.patience,
                     stagnation="raise" if cfg.strict else "return")


@dataclass(frozen=True, eq=False)
class FlowProblem:
    grid: CurvilinearGrid
    params: FlowParams
    ops: CurvilinearOperators
    proj: ProjectionOperators
    vel_mask: TensorTrainState
    u_bc: TensorTrainState
    v_bc: TensorTrainState
    dt: float

    def initial_state(self) -> FlowState:
        zero = self.u_bc * 0.0
        return FlowState(self.u_bc, self.v_bc, zero, 0.0, 0)


def build_flow_problem(grid: CurvilinearGrid, params: FlowParams = FlowParams(), sigma: float = 1.0,
                       policy: TruncationPolicy = CURVI_POLICY,
                       ops: CurvilinearOperators | None = None) -> FlowProblem:
    ops = ops if ops is not None else build_curvilinear_operators(grid, policy=policy)
    proj = build_projection(grid, ops, sigma, policy)
    dt = params.dt if params.dt is not None else stable_dt(grid, params)
    check_cfl(grid, params, dt)
    ub, vb = boundary_arrays(grid, params)
    return FlowProblem(grid, replace(params, dt=dt), ops, proj, _field(velocity_mask_array(grid), grid),
                       _field(ub, grid), _field(vb, grid), dt)


def divergence(problem: FlowProblem, u: TensorTrainState, v: TensorTrainState,
               policy: TruncationPolicy | None = None) -> TensorTrainState:
    pr = problem.proj
    return linear_combination([1.0, 1.0], [apply_operator(pr.bx, u, policy), apply_operator(pr.by, v, policy)],
                              policy or TruncationPolicy.exact())


def relative_divergence(problem: FlowProblem, u, v) -> float:
    speed = math.hypot(norm(u), norm(v))
    return norm(divergence(problem, u, v)) / speed if speed > 0 else 0.0


def chorin_step(fs: FlowState, problem: FlowProblem, policy: TruncationPolicy,
                poisson_cfg: PoissonConfig = PoissonConfig()) -> tuple[FlowState, StepInfo]:
    """One predictor / pressure / projection step.

    ``policy`` governs every MPS operation of the step (truncated runs cap the
    bond dimension here); the Poisson solve uses ``poisson_cfg``.
    """
    ops, pr, prm = problem.ops, problem.proj, problem.params
    dt = problem.dt

    def predict(q, q_bc):
        qx = apply_operator(ops.dx, q, policy)
        qy = apply_operator(ops.dy, q, policy)
        adv = linear_combination([1.0, 1.0], [pointwise_multiply(fs.u, qx, policy),
                                              pointwise_multiply(fs.v, qy, policy)], policy)
        visc = apply_operator(ops.lap, q, policy)
        new = linear_combination([1.0, dt * prm.nu, -dt], [q, visc, adv], policy)
        inner_part = pointwise_multiply(problem.vel_mask, new - q_bc, policy)
        return linear_combination([1.0, 1.0], [inner_part, q_bc], policy)

    us, vs = predict(fs.u, problem.u_bc), predict(fs.v, problem.v_bc)
    div_star = divergence(problem, us, vs, policy)
    rhs = remove_null(div_star * (-prm.rho / dt), pr.null, policy)
    scale = prm.rho / dt * math.hypot(norm(us), norm(vs))
    if norm(rhs) <= ROUNDOFF_DIVERGENCE * scale:
        # already divergence-free to roundoff; a relative-residual solve would chase noise
        sol = SolveResult(rhs * 0.0, 0.0, 0, True)
    else:
        sol = poisson_solve(pr.K, rhs, poisson_cfg, fs.p)
    if not sol.converged and poisson_cfg.strict:
        raise PoissonFailure(f"pressure solve stopped at residual {sol.residual:.3e} after {sol.sweeps} sweeps")
    p = sol.x
    c = dt / prm.rho
    u = linear_combination([1.0, -c], [us, apply_operator(pr.gx, p, policy)], policy)
    v = linear_combination([1.0, -c], [vs, apply_operator(pr.gy, p, policy)], policy)
    info = StepInfo(sol.residual, sol.sweeps, relative_divergence(problem, u, v),
                    {"u": u.max_bond, "v": v.max_bond, "p": p.max_bond})
    return FlowState(u, v, p, fs.t + dt, fs.step + 1), info


# -- diagnostics ---------------------------------------------------------------

def relative_change(a: FlowState, b: FlowState) -> float:
    du = linear_combination([1.0, -1.0], [b.u, a.u], TruncationPolicy.exact())
    dv = linear_combination([1.0, -1.0], [b.v, a.v], TruncationPolicy.exact())
    den = math.hypot(norm(a.u), norm(a.v))
    return math.hypot(norm(du), norm(dv)) / den if den > 0 else math.inf


class SteadyDetector:
    """True once the relative velocity change stays below ``tol`` for ``count`` steps."""

    def __init__(self, tol: float = 1e-8, count: int = 10):
        self.tol, self.count, self.run = tol, count, 0

    def update(self, change: float) -> bool:
        self.run = self.run + 1 if change <= self.tol else 0
        return self.run >= self.count


def wall_pressure(p: np.ndarray) -> np.ndarray:
    """Extrapolate half-row pressure to the wall: ``(9 p_{1/2} - p_{3/2}) / 8``."""
    return (9.0 * p[1] - p[2]) / 8.0


def far_pressure(p: np.ndarray) -> float:
    return float(np.mean(p[-1]))


def surface_geometry(grid: CurvilinearGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit normals into the body and arc-length weights along the wall row."""
    xx, yx = decode_grid(grid.x_xi)[0], decode_grid(grid.y_xi)[0]
    xe, ye = decode_grid(grid.x_eta)[0], decode_grid(grid.y_eta)[0]
    ds = np.hypot(xx, yx)
    if np.any(ds <= 0):
        raise ValueError("degenerate surface: zero arc length")
    nx, ny = -yx / ds, xx / ds
    flip = np.sign(nx * xe + ny * ye)
    flip[flip == 0] = 1.0
    return -flip * nx, -flip * ny, ds


def pressure_coefficient(p: np.ndarray, params: FlowParams, p_inf: float | None = None) -> np.ndarray:
    p_inf = far_pressure(p) if p_inf is None else p_inf
    return (wall_pressure(p) - p_inf) / (0.5 * params.rho * params.u_inf**2)


def cp_profile(fs: FlowState, grid: CurvilinearGrid, params: FlowParams) -> tuple[np.ndarray, np.ndarray]:
    """Surface angle (degrees, measured from the +x axis) and Cp along the wall."""
    X, Y = grid.coords()
    theta = np.degrees(np.arctan2(Y[0], X[0])) % 360.0
    return theta, pressure_coefficient(decode_grid(fs.p), params)


def horizontal_force_from_wall(p_wall: np.ndarray, p_inf: float, grid: CurvilinearGrid) -> float:
    """``sum (p - p_inf) n_x ds`` over the periodic wall (trapezoidal rule)."""
    nx, _, ds = surface_geometry(grid)
    return float(np.sum((p_wall - p_inf) * nx * ds))


def horizontal_force(fs: FlowState, grid: CurvilinearGrid) -> float:
    p = decode_grid(fs.p)
    return horizontal_force_from_wall(wall_pressure(p), far_pressure(p), grid)


def relative_error(a: np.ndarray, ref: np.ndarray) -> float:
    d = float(np.linalg.norm(ref))
    if d == 0:
        return math.nan
    return float(np.linalg.norm(a - ref)) / d


def speed(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.hypot(u, v)


def relative_error_series(run: list[dict], reference: list[dict]) -> dict:
    """``eps`` for pressure and speed at each matched sample; zero-norm samples give NaN."""
    if len(run) != len(reference):
        raise ValueError("runs have different numbers of samples")
    out = {"p": [], "speed": []}
    for a, b in zip(run, reference):
        out["p"].append(relative_error(a["p"], b["p"]))
        out["speed"].append(relative_error(speed(a["u"], a["v"]), speed(b["u"], b["v"])))
    return {k: np.array(v) for k, v in out.items()}


def run_flow(problem: FlowProblem, steps: int, policy: TruncationPolicy,
             poisson_cfg: PoissonConfig = PoissonConfig(), state: FlowState | None = None,
             sample_every: int = 0, steady: SteadyDetector | None = None, callback=None):
    """Advance ``steps`` steps. Returns the final state, per-step info and decoded samples."""
    fs = state if state is not None else problem.initial_state()
    infos, samples = [], []
    for _ in range(steps):
        new, info = chorin_step(fs, problem, policy, poisson_cfg)
        infos.append(info)
        if sample_every and new.step % sample_every == 0:
            samples.append({"step": new.step, "t": new.t, **new.fields()})
        if callback is not None:
            callback(new, info)
        done = steady is not None and steady.update(relative_change(fs, new))
        fs = new
        if done:
            break
    return fs, infos, samples
