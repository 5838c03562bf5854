"""Two-site alternating least-squares solver for ``A x = b`` in tensor-train form.

``A`` must be Hermitian positive definite (or semidefinite with ``b`` in its
range). Each local step minimizes the energy ``x^H A x - 2 Re x^H b`` over two
neighbouring cores with the rest of the chain in mixed-canonical form, using
conjugate gradients on the projected operator applied through environments
(small local systems are assembled and solved directly).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .operator import TensorTrainOperator, apply_operator
from .state import TensorTrainState, linear_combination, norm, truncate
from .chain import right_orthogonalize
from .truncation import TruncationPolicy


class SolverStagnation(RuntimeError):
    """The residual did not decrease over consecutive sweeps."""


@dataclass(frozen=True)
class SolveResult:
    x: TensorTrainState
    residual: float
    sweeps: int
    converged: bool
    history: tuple = ()


def residual_norm(A: TensorTrainOperator, x: TensorTrainState, b: TensorTrainState) -> float:
    """``|A x - b| / |b|`` evaluated without truncation."""
    ax = apply_operator(A, x, None)
    r = linear_combination([1.0, -1.0], [ax, b], TruncationPolicy.exact())
    nb = norm(b)
    return norm(r) / nb if nb > 0 else norm(r)


def _left_op_env(env, x, w):
    """``env[a, w, b]`` (bra bond, operator bond, ket bond) extended by one site."""
    t = np.tensordot(env, x, axes=(2, 0))                    # a, w, s, B
    t = np.tensordot(t, w, axes=([1, 2], [0, 2]))             # a, B, o, W
    t = np.tensordot(x.conj(), t, axes=([0, 1], [0, 2]))      # A, B, W
    return t.transpose(0, 2, 1)


def _right_op_env(env, x, w):
    # env[A, W, B] of sites to the right
    t = np.tensordot(x, env, axes=(2, 2))              # a, s, A, W
    t = np.tensordot(w, t, axes=([2, 3], [1, 3]))      # w, o, a, A
    return np.tensordot(x.conj(), t, axes=([1, 2], [1, 3]))  # a', w, a


def _left_vec_env(env, x, y):
    # env[a, b]: bra x, ket y
    t = np.tensordot(env, y, axes=(1, 0))               # a, s, B
    return np.tensordot(x.conj(), t, axes=([0, 1], [0, 1]))


def _right_vec_env(env, x, y):
    t = np.tensordot(y, env, axes=(2, 1))               # b, s, A
    return np.tensordot(x.conj(), t, axes=([1, 2], [1, 2]))


class _Environments:
    """Cached operator and right-hand-side environments around the active pair."""

    def __init__(self, A, b_cores, x_cores):
        n = len(x_cores)
        self.A, self.b = A.cores, b_cores
        self.lop = [None] * (n + 1)
        self.rop = [None] * (n + 1)
        self.lvec = [None] * (n + 1)
        self.rvec = [None] * (n + 1)
        one3 = np.ones((1, 1, 1), dtype=complex)
        one2 = np.ones((1, 1), dtype=complex)
        self.lop[0], self.rop[n] = one3, one3
        self.lvec[0], self.rvec[n] = one2, one2
        for k in range(n - 1, 1, -1):
            self.update_right(k, x_cores[k])

    def update_left(self, k, core):
        self.lop[k + 1] = _left_op_env(self.lop[k], core, self.A[k])
        self.lvec[k + 1] = _left_vec_env(self.lvec[k], core, self.b[k])

    def update_right(self, k, core):
        self.rop[k] = _right_op_env(self.rop[k + 1], core, self.A[k])
        self.rvec[k] = _right_vec_env(self.rvec[k + 1], core, self.b[k])


def _local_problem(envs: _Environments, k: int):
    L, R = envs.lop[k], envs.rop[k + 2]
    W1, W2 = envs.A[k], envs.A[k + 1]
    shape = (L.shape[2], 2, 2, R.shape[2])

    def matvec(v):
        t = v.reshape(shape)
        t = np.tensordot(L, t, axes=(2, 0))                 # a, w, s1, s2, b
        t = np.tensordot(t, W1, axes=([1, 2], [0, 2]))       # a, s2, b, o1, w1
        t = np.tensordot(t, W2, axes=([1, 4], [2, 0]))       # a, b, o1, o2, w2
        t = np.tensordot(t, R, axes=([1, 4], [2, 1]))        # a, o1, o2, A
        return t.reshape(-1)

    Lb, Rb = envs.lvec[k], envs.rvec[k + 2]
    rhs = np.tensordot(Lb, envs.b[k], axes=(1, 0))
    rhs = np.tensordot(rhs, envs.b[k + 1], axes=(2, 0))
    rhs = np.tensordot(rhs, Rb, axes=(3, 1))
    size = int(np.prod(shape))
    op = spla.LinearOperator((size, size), matvec=matvec, dtype=complex)
    return op, rhs.reshape(-1), shape


def _local_dense(envs: _Environments, k: int) -> np.ndarray:
    """The projected two-site matrix, assembled explicitly (small problems only)."""
    L, R = envs.lop[k], envs.rop[k + 2]
    m = np.einsum("awc,woiv,vpju,AuB->aopAcijB", L, envs.A[k], envs.A[k + 1], R, optimize=True)
    size = L.shape[0] * 4 * R.shape[0]
    return m.reshape(size, size)


def _split(theta, shape, policy, to_right: bool):
    l, _, _, r = shape
    mat = theta.reshape(l * 2, 2 * r)
    u, s, vh = np.linalg.svd(mat, full_matrices=False)
    k = policy.keep(s)
    u, s, vh = u[:, :k], s[:k], vh[:k]
    if to_right:
        return u.reshape(l, 2, k), (s[:, None] * vh).reshape(k, 2, r)
    return (u * s).reshape(l, 2, k), vh.reshape(k, 2, r)


def als_solve(A: TensorTrainOperator, b: TensorTrainState, x0: TensorTrainState | None = None,
              policy: TruncationPolicy = TruncationPolicy(max_bond=32, cutoff=1e-14),
              tol: float = 1e-10, max_sweeps: int = 20, local_tol: float | None = None,
              local_maxiter: int = 500, patience: int = 3, stagnation: str = "raise",
              dense_local: int = 1024) -> SolveResult:
    """Solve ``A x = b`` by two-site sweeps.

    Stops when ``|A x - b| / |b| <= tol`` or after ``max_sweeps`` sweeps.
    Raises :class:`SolverStagnation` when the residual fails to decrease for
    ``patience`` consecutive sweeps before reaching ``tol``; with
    ``stagnation="return"`` the unconverged result is returned instead (useful
    when a bond cap bounds the attainable residual).
    """
    if stagnation not in ("raise", "return"):
        raise ValueError("stagnation must be 'raise' or 'return'")
    if A.n != b.n:
        raise ValueError("operator and right-hand side sizes differ")
    n = b.n
    nb = norm(b)
    if nb == 0:
        zero = b * 0.0
        return SolveResult(zero, 0.0, 0, True)
    if n < 2:
        dense = A.cores[0][0, :, :, 0]
        vec = b.cores[0][0, :, 0] * b.prefactor
        sol = np.linalg.solve(dense, vec)
        x = TensorTrainState((sol.reshape(1, 2, 1),), 1.0, b.axis_split)
        return SolveResult(x, residual_norm(A, x, b), 1, True)
    if local_tol is None:
        local_tol = min(1e-3 * tol, 1e-12)
    b_cores = list(b.cores)
    b_cores[0] = b_cores[0] * b.prefactor
    x = x0 if x0 is not None else truncate(b, policy)
    cores = list(x.cores)
    cores[0] = cores[0] * x.prefactor
    cores = right_orthogonalize(cores)
    envs = _Environments(A, b_cores, cores)
    best = np.inf
    bad = 0
    history = []
    res = np.inf
    for sweep in range(1, max_sweeps + 1):
        for direction in (+1, -1):
            order = range(n - 1) if direction > 0 else range(n - 2, -1, -1)
            for k in order:
                op, rhs, shape = _local_problem(envs, k)
                if rhs.size <= dense_local:
                    theta = np.linalg.solve(_local_dense(envs, k), rhs)
                else:
                    guess = np.tensordot(cores[k], cores[k + 1], axes=(2, 0)).reshape(-1)
                    theta, _ = spla.cg(op, rhs, x0=guess, rtol=local_tol, atol=0.0, maxiter=local_maxiter)
                left, right = _split(theta, shape, policy, to_right=direction > 0)
                cores[k], cores[k + 1] = left, right
                if direction > 0:
                    envs.update_left(k, left)
                else:
                    envs.update_right(k + 1, right)
        x = TensorTrainState(tuple(cores), 1.0, b.axis_split)
        res = residual_norm(A, x, b)
        history.append(res)
        if res <= tol:
            return SolveResult(x, res, sweep, True, tuple(history))
        if res < best * (1 - 1e-3):
            best, bad = res, 0
        else:
            bad += 1
            if bad >= patience:
                if stagnation == "return":
                    return SolveResult(x, res, sweep, False, tuple(history))
                raise SolverStagnation(f"residual stalled at {res:.3e} after {sweep} sweeps")
    return SolveResult(x, res, max_sweeps, False, tuple(history))
