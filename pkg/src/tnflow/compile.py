"""Translation of an MPO into a sequence of unitaries on state plus auxiliary qubits.

A compiled operator is ``M ~ a_q * Q`` where ``Q = <0|_aux U_n ... U_1 |0>_aux``.
``U_j`` acts on the ``z`` auxiliary qubits and state qubit ``j``; the auxiliary
register carries the bond between consecutive sites. As an MPO, core ``j`` of
``Q`` is ``W_j[a_in, out, in, a_out] = U_j[(a_out, out), (a_in, in)]``; its
matrix form ``X_j`` with rows ``(a_out, out)`` and columns ``(a_in, in)`` is an
isometry for the first site, unitary in the bulk and a co-isometry for the last
site.
"""

from __future__ import annotations

import struct
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import TensorTrainOperator, io, operator_inner, operator_to_dense
from .core.truncation import svd

ARMIJO = 1e-4
MIN_STEP = 2.0**-40


# -- matrix views of the cores ------------------------------------------------

def core_to_matrix(w: np.ndarray) -> np.ndarray:
    """``(a_in, out, in, a_out)`` core -> ``(a_out*2, a_in*2)`` matrix."""
    l, o, i, r = w.shape
    return w.transpose(3, 1, 0, 2).reshape(r * o, l * i)


def matrix_to_core(x: np.ndarray, left: int, right: int) -> np.ndarray:
    return x.reshape(right, 2, left, 2).transpose(2, 1, 3, 0)


def _tall(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Orient so that the columns are orthonormal; the flag records a transpose."""
    if x.shape[0] >= x.shape[1]:
        return x, False
    return x.conj().T, True


def _untall(x: np.ndarray, flipped: bool) -> np.ndarray:
    return x.conj().T if flipped else x


def qr_retract(x: np.ndarray) -> np.ndarray:
    """Q factor of a tall matrix with the sign of ``diag(R)`` fixed to be positive."""
    q, r = np.linalg.qr(x)
    d = np.diag(r)
    ph = np.where(np.abs(d) > 0, d / np.maximum(np.abs(d), 1e-300), 1.0)
    return q * ph[None, :]


def polar(x: np.ndarray) -> np.ndarray:
    """Closest matrix with orthonormal columns (tall input)."""
    u, _, vh = svd(x)
    return u @ vh


def _tangent(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Projection onto the tangent space of the Stiefel manifold at ``x`` (tall)."""
    xg = x.conj().T @ g
    return g - x @ ((xg + xg.conj().T) / 2.0)


# -- the isometric MPO --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class IsometricMPO:
    cores: tuple
    z: int

    def __post_init__(self):
        cores = tuple(np.array(c, dtype=complex) for c in self.cores)
        for c in cores:
            c.flags.writeable = False
        object.__setattr__(self, "cores", cores)

    @property
    def n(self) -> int:
        return len(self.cores)

    def operator(self) -> TensorTrainOperator:
        return TensorTrainOperator(self.cores)

    def matrices(self) -> list[np.ndarray]:
        return [core_to_matrix(c) for c in self.cores]

    def isometry_residuals(self) -> list[float]:
        out = []
        for x in self.matrices():
            t, _ = _tall(x)
            out.append(float(np.max(np.abs(t.conj().T @ t - np.eye(t.shape[1])))))
        return out


def _bond_dims(n: int, z: int) -> list[int]:
    """Left bond of each core plus the final right bond."""
    d = 1 << z
    return [1] + [d] * (n - 1) + [1]


def from_matrices(mats, z: int) -> IsometricMPO:
    dims = _bond_dims(len(mats), z)
    return IsometricMPO(tuple(matrix_to_core(x, dims[j], dims[j + 1]) for j, x in enumerate(mats)), z)


def init_isometric_cores(M: TensorTrainOperator, z: int, method: str = "polar",
                         seed: int = 0) -> IsometricMPO:
    """Starting point for :func:`compile`.

    ``"polar"`` pads every core of ``M`` to the uniform bond ``2**z`` and replaces
    it by its closest isometry; rank-deficient cores are completed by the SVD.
    ``"identity"`` starts from the identity operator, ``"random"`` from Haar-like
    random isometries.
    """
    if z <= 0:
        raise ValueError("z must be positive")
    if (1 << z) < M.max_bond:
        warnings.warn(f"2**z = {1 << z} is below the operator bond {M.max_bond}", stacklevel=2)
    dims = _bond_dims(M.n, z)
    rng = np.random.default_rng(seed)
    mats = []
    for j, w in enumerate(M.cores):
        l, r = dims[j], dims[j + 1]
        if method == "identity":
            x = np.eye(2 * r, 2 * l, dtype=complex)
        elif method == "random":
            x = rng.normal(size=(2 * r, 2 * l)) + 1j * rng.normal(size=(2 * r, 2 * l))
        elif method == "polar":
            pad = np.zeros((l, 2, 2, r), dtype=complex)
            pad[: w.shape[0], :, :, : w.shape[3]] = w[:l, :, :, :r]
            x = core_to_matrix(pad)
        else:
            raise ValueError(f"unknown init method {method!r}")
        t, flip = _tall(x)
        mats.append(_untall(polar(t), flip))
    return from_matrices(mats, z)


# -- cost and gradient --------------------------------------------------------

def _left_envs(a: list[np.ndarray], b: list[np.ndarray]) -> list[np.ndarray]:
    """``envs[j]`` contracts sites ``< j`` of ``tr(A^dagger B)``."""
    env = np.ones((1, 1), dtype=complex)
    out = [env]
    for x, y in zip(a, b):
        tmp = np.tensordot(env, y, axes=(1, 0))
        env = np.tensordot(x.conj(), tmp, axes=([0, 1, 2], [0, 1, 2]))
        out.append(env)
    return out


def _right_envs(a: list[np.ndarray], b: list[np.ndarray]) -> list[np.ndarray]:
    """``envs[j]`` contracts sites ``>= j``."""
    env = np.ones((1, 1), dtype=complex)
    out = [env]
    for x, y in zip(reversed(a), reversed(b)):
        tmp = np.tensordot(y, env, axes=(3, 1))  # lb, o, i, ra
        env = np.tensordot(x.conj(), tmp, axes=([1, 2, 3], [1, 2, 3]))
        out.append(env)
    return out[::-1]


def _site_derivatives(a: list[np.ndarray], b: list[np.ndarray]) -> list[np.ndarray]:
    """``d tr(A^dagger B) / d conj(A_j)`` for every site."""
    left, right = _left_envs(a, b), _right_envs(a, b)
    out = []
    for j, y in enumerate(b):
        tmp = np.tensordot(left[j], y, axes=(1, 0))  # la, o, i, rb
        out.append(np.tensordot(tmp, right[j + 1], axes=(3, 1)))  # la, o, i, ra
    return out


@dataclass
class _Problem:
    M: TensorTrainOperator
    norm_m2: float
    paper_denominator: bool = False

    def overlaps(self, q: IsometricMPO) -> tuple[float, float]:
        op = q.operator()
        return operator_inner(op, op).real, operator_inner(op, self.M).real

    def a_q(self, qq: float, qm: float) -> float:
        return qm / (self.norm_m2 if self.paper_denominator else qq)

    def cost(self, a: float, qq: float, qm: float) -> float:
        return max(a * a * qq - 2.0 * a * qm + self.norm_m2, 0.0)


def update_a_q(q: IsometricMPO, M: TensorTrainOperator, paper_denominator: bool = False) -> float:
    """Real ``a`` minimizing ``|a Q - M|_F^2``: ``Re tr(Q^dagger M) / |Q|_F^2``.

    ``paper_denominator=True`` divides by ``|M|_F^2`` instead.
    """
    p = _Problem(M, operator_inner(M, M).real, paper_denominator)
    return p.a_q(*p.overlaps(q))


def cost_function(q: IsometricMPO, M: TensorTrainOperator, a: float) -> float:
    """``|a Q - M|_F^2`` by contraction."""
    p = _Problem(M, operator_inner(M, M).real)
    return p.cost(a, *p.overlaps(q))


def euclidean_gradient(q: IsometricMPO, M: TensorTrainOperator, a: float) -> list[np.ndarray]:
    """``2 dC / d conj(W_j)`` per core, at fixed ``a``."""
    cores = list(q.cores)
    dqq = _site_derivatives(cores, cores)
    dqm = _site_derivatives(cores, list(M.cores))
    return [2.0 * (a * a * g1 - a * g2) for g1, g2 in zip(dqq, dqm)]


def riemannian_gradient(q: IsometricMPO, M: TensorTrainOperator, a: float) -> list[np.ndarray]:
    """Tangent-space projection of the Euclidean gradient, in tall matrix form per core."""
    grads = euclidean_gradient(q, M, a)
    out = []
    for w, g in zip(q.cores, grads):
        x, flip = _tall(core_to_matrix(w))
        gm = core_to_matrix(g)
        gm = gm.conj().T if flip else gm
        out.append(_tangent(x, gm))
    return out


def _metric_envs(q: IsometricMPO, shift: float = 1e-3):
    """Regularized inverses of the left/right environments of ``|Q|^2`` at every site.

    ``L_j (x) R_j`` is the exact per-site Hessian block of ``|Q|_F^2``; its
    inverse is used as a block-diagonal preconditioner.
    """
    cores = list(q.cores)
    left, right = _left_envs(cores, cores), _right_envs(cores, cores)
    out = []
    for j in range(q.n):
        pair = []
        for e in (left[j], right[j + 1]):
            e = (e + e.conj().T) / 2.0
            w, v = np.linalg.eigh(e)
            floor = shift * max(w.max(), 1e-300)
            pair.append((v / np.maximum(w, floor)) @ v.conj().T)
        out.append(tuple(pair))
    return out


def _precondition(q: IsometricMPO, vecs, envs) -> list[np.ndarray]:
    """Apply the inverse environments to tangent vectors (tall matrix form) and re-project."""
    out = []
    dims = _bond_dims(q.n, q.z)
    for j, ((x, flip), v) in enumerate(zip(_tall_mats(q), vecs)):
        core = matrix_to_core(_untall(v, flip), dims[j], dims[j + 1])
        linv, rinv = envs[j]
        core = np.einsum("ab,bOIc,dc->aOId", linv, core, rinv)
        m = core_to_matrix(core)
        out.append(_tangent(x, m.conj().T if flip else m))
    return out


def _tall_mats(q: IsometricMPO):
    return [_tall(x) for x in q.matrices()]


def retract(q: IsometricMPO, direction: list[np.ndarray], step: float) -> IsometricMPO:
    mats = []
    for (x, flip), d in zip(_tall_mats(q), direction):
        mats.append(_untall(qr_retract(x + step * d), flip))
    return from_matrices(mats, q.z)


def _dot(a, b) -> float:
    return float(sum(np.vdot(x, y).real for x, y in zip(a, b)))


def riemannian_step(q: IsometricMPO, M: TensorTrainOperator, a_q: float, step: float = 1.0,
                    direction=None, grad=None):
    """One backtracking line-search step along ``direction`` (default: steepest descent).

    Returns ``(new_q, accepted_step, new_cost)``; ``accepted_step = 0`` means no
    step satisfied the Armijo condition and ``q`` is returned unchanged.
    """
    p = _Problem(M, operator_inner(M, M).real)
    c0 = p.cost(a_q, *p.overlaps(q))
    if grad is None:
        grad = riemannian_gradient(q, M, a_q)
    if not all(np.all(np.isfinite(g)) for g in grad):
        raise FloatingPointError("non-finite gradient")
    if direction is None:
        direction = [-g for g in grad]
    slope = _dot(grad, direction)
    if slope >= 0:
        return q, 0.0, c0
    t = step
    while t >= MIN_STEP:
        trial = retract(q, direction, t)
        c = p.cost(a_q, *p.overlaps(trial))
        if c <= c0 + ARMIJO * t * slope:
            return trial, t, c
        t *= 0.5
    return q, 0.0, c0


# -- driver -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CompiledOperator:
    """``M ~ a_q * <0|_aux U_n ... U_1 |0>_aux``."""

    q: IsometricMPO
    unitaries: tuple
    a_q: float
    epsilon: float
    z: int
    converged: bool = True
    history: tuple = field(default=(), repr=False)

    @property
    def n(self) -> int:
        return self.q.n

    def operator(self) -> TensorTrainOperator:
        """``a_q * Q`` as an MPO."""
        return self.q.operator() * self.a_q


def complete_unitaries(q: IsometricMPO, seed: int = 1234) -> tuple:
    """Embed every core into a ``2**(z+1)`` unitary ``U[(a_out, out), (a_in, in)]``.

    The missing columns (first site) or rows (last site) are an orthonormal
    complement obtained from a seeded Gram-Schmidt (QR) pass.
    """
    dim = 2 << q.z
    rng = np.random.default_rng(seed)
    out = []
    for j, w in enumerate(q.cores):
        x = core_to_matrix(w)  # rows (a_out, out), cols (a_in, in)
        l, r = w.shape[0], w.shape[3]
        u = np.zeros((dim, dim), dtype=complex)
        # embed: a_in / a_out index 0 holds the boundary slice
        rows = np.array([ao * 2 + o for ao in range(r) for o in range(2)])
        cols = np.array([ai * 2 + i for ai in range(l) for i in range(2)])
        if x.shape == (dim, dim):
            u = x.copy()
        elif x.shape[0] >= x.shape[1]:  # known columns
            u[np.ix_(rows, cols)] = x
            u = _complete_columns(u, cols, rng)
        else:  # known rows
            u[np.ix_(rows, cols)] = x
            u = _complete_columns(u.conj().T, rows, rng).conj().T
        out.append(u)
    return tuple(out)


def _complete_columns(u: np.ndarray, known: np.ndarray, rng) -> np.ndarray:
    dim = u.shape[0]
    fixed = u[:, known]
    extra = rng.normal(size=(dim, dim - len(known))) + 1j * rng.normal(size=(dim, dim - len(known)))
    q, _ = np.linalg.qr(np.concatenate([fixed, extra], axis=1))
    # the first columns of q span the known ones; restore them exactly
    comp = q[:, len(known):]
    comp = comp - fixed @ (fixed.conj().T @ comp)
    comp = qr_retract(comp)
    res = np.zeros_like(u)
    res[:, known] = fixed
    others = np.setdiff1d(np.arange(dim), known)
    res[:, others] = comp
    return res


def _line_search(p: _Problem, q: IsometricMPO, a: float, cost: float, direction, slope: float,
                 t: float, reduced: bool):
    """Armijo backtracking; with ``reduced`` every trial point gets its own exact ``a_q``."""
    while t >= MIN_STEP:
        trial = retract(q, direction, t)
        qq, qm = p.overlaps(trial)
        a_t = p.a_q(qq, qm) if reduced else a
        c = p.cost(a_t, qq, qm)
        if c <= cost + ARMIJO * t * slope:
            return trial, t, a_t, c
        t *= 0.5
    return q, 0.0, a, cost


def _two_loop(grad, memory, precond=None):
    """L-BFGS direction ``-H grad`` from stored (s, y) pairs.

    ``precond`` replaces the scaled identity as the initial inverse Hessian.
    """
    d = [g.copy() for g in grad]
    alphas = []
    for s_k, y_k, rho in reversed(memory):
        al = rho * _dot(s_k, d)
        alphas.append(al)
        d = [x - al * y for x, y in zip(d, y_k)]
    s_k, y_k, _ = memory[-1]
    if precond is None:
        gamma = _dot(s_k, y_k) / max(_dot(y_k, y_k), 1e-300)
        d = [gamma * x for x in d]
    else:
        d = precond(d)
        hy = precond(y_k)
        gamma = _dot(s_k, y_k) / max(_dot(y_k, hy), 1e-300)
        d = [gamma * x for x in d]
    for (s_k, y_k, rho), al in zip(memory, reversed(alphas)):
        be = rho * _dot(y_k, d)
        d = [x + (al - be) * s for x, s in zip(d, s_k)]
    return [-x for x in d]


def compile_operator(M: TensorTrainOperator, z: int, tol: float = 1e-10, max_iters: int = 2000,
                     init: str | IsometricMPO = "polar", paper_denominator: bool = False,
                     method: str = "lbfgs", memory: int = 30, seed: int = 0,
                     time_limit: float | None = None, precondition: bool = False,
                     callback=None) -> CompiledOperator:
    """Alternate exact ``a_q`` updates with Riemannian line-search steps.

    Every iteration takes one retraction step along a descent direction on all
    cores at once, then recomputes ``a_q``. ``method`` selects the direction:
    ``"lbfgs"`` (limited-memory quasi-Newton, tangent vectors transported by
    projection), ``"cg"`` (Polak-Ribiere+) or ``"gd"`` (steepest descent).
    Stops when ``epsilon <= tol``, after ``max_iters`` iterations, or when no
    step satisfies the Armijo condition three times in a row.
    """
    if method not in ("lbfgs", "cg", "gd"):
        raise ValueError(f"unknown method {method!r}")
    p = _Problem(M, operator_inner(M, M).real, paper_denominator)
    if p.norm_m2 == 0:
        raise ValueError("cannot compile the zero operator")
    q = init if isinstance(init, IsometricMPO) else init_isometric_cores(M, z, init, seed)
    qq, qm = p.overlaps(q)
    a = p.a_q(qq, qm)
    cost = p.cost(a, qq, qm)
    history = [cost / p.norm_m2]
    reduced = not paper_denominator
    mem: list = []
    prev_dir = prev_grad = None
    grad = riemannian_gradient(q, M, a)
    stalls = 0
    start = time.perf_counter()
    for it in range(1, max_iters + 1):
        if cost / p.norm_m2 <= tol:
            break
        if time_limit is not None and time.perf_counter() - start > time_limit:
            break
        if not all(np.all(np.isfinite(g)) for g in grad):
            raise FloatingPointError("non-finite gradient")
        precond = None
        if precondition:
            envs = _metric_envs(q)
            precond = lambda v, q=q, envs=envs: _precondition(q, v, envs)  # noqa: E731
        direction = [-g for g in (precond(grad) if precond and not mem else grad)]
        if method == "lbfgs" and mem:
            direction = _two_loop(grad, mem, precond)
        elif method == "cg" and prev_grad is not None:
            beta = max(0.0, _dot(grad, [g - h for g, h in zip(grad, prev_grad)])
                       / max(_dot(prev_grad, prev_grad), 1e-300))
            direction = [-g + beta * d for g, d in zip(grad, prev_dir)]
        slope = _dot(grad, direction)
        if slope >= 0:
            direction, mem, slope = [-g for g in grad], [], -_dot(grad, grad)
        q_new, t, a_new, c_new = _line_search(p, q, a, cost, direction, slope, 1.0, reduced)
        if t == 0.0 and (mem or prev_grad is not None):
            direction, slope = [-g for g in grad], -_dot(grad, grad)
            q_new, t, a_new, c_new = _line_search(p, q, a, cost, direction, slope, 1.0, reduced)
        if t == 0.0:
            stalls += 1
            mem, prev_grad = [], None
            if stalls >= 3:
                break
            continue
        stalls = 0
        new_grad = riemannian_gradient(q_new, M, a_new)
        tall = [x for x, _ in _tall_mats(q_new)]
        step = [_tangent(x, t * d) for x, d in zip(tall, direction)]
        moved_grad = [_tangent(x, g) for x, g in zip(tall, grad)]
        if method == "lbfgs":
            mem = [([_tangent(x, v) for x, v in zip(tall, s_k)],
                    [_tangent(x, v) for x, v in zip(tall, y_k)], 0.0) for s_k, y_k, _ in mem]
            y = [g - h for g, h in zip(new_grad, moved_grad)]
            sy = _dot(step, y)
            if sy > 1e-14 * np.sqrt(_dot(step, step) * _dot(y, y)):
                mem.append((step, y, 0.0))
            mem = [(s_k, y_k, 1.0 / _dot(s_k, y_k)) for s_k, y_k, _ in mem[-memory:]
                   if _dot(s_k, y_k) > 0]
        prev_grad = moved_grad
        prev_dir = [_tangent(x, d) for x, d in zip(tall, direction)]
        q, a, cost, grad = q_new, a_new, c_new, new_grad
        if not reduced:
            qq, qm = p.overlaps(q)
            a = p.a_q(qq, qm)
            cost = p.cost(a, qq, qm)
            grad = riemannian_gradient(q, M, a)
        history.append(cost / p.norm_m2)
        if callback is not None:
            callback(it, cost / p.norm_m2)
    eps = cost / p.norm_m2
    return CompiledOperator(q, complete_unitaries(q), float(a), float(eps), z, eps <= tol, tuple(history))


def reconstruct_dense(c: CompiledOperator, M: TensorTrainOperator, dense_limit: int = 8):
    """Dense ``a_q Q`` and ``M`` plus their relative Frobenius gap."""
    if c.n > dense_limit:
        raise ValueError(f"n={c.n} exceeds the dense limit {dense_limit}")
    approx = c.a_q * operator_to_dense(c.q.operator())
    target = operator_to_dense(M)
    gap = np.linalg.norm(approx - target) / np.linalg.norm(target)
    return approx, target, float(gap)


def aux_projected_product(c: CompiledOperator) -> np.ndarray:
    """``<0|_aux U_n ... U_1 |0>_aux`` from the dense unitaries (small ``n`` only).

    The auxiliary register is the most significant factor of every ``U_j``.
    """
    n, z = c.n, c.z
    d = 1 << z
    dim_s = 1 << n
    # full unitary product on aux (x) state with state qubit j embedded
    total = np.eye(d * dim_s, dtype=complex)
    for j, u in enumerate(c.unitaries):
        u4 = u.reshape(d, 2, d, 2)  # a_out, out, a_in, in
        left, right = np.eye(1 << j), np.eye(1 << (n - 1 - j))
        full = np.einsum("AoBi,pq,rs->AporBqis", u4, left, right)
        total = full.reshape(d * dim_s, d * dim_s) @ total
    return total.reshape(d, dim_s, d, dim_s)[0, :, 0, :]



# -- serialization ------------------------------------------------------------

_COMPILED_MAGIC = b"TNFC"
_COMPILED_HEAD = struct.Struct("<4sIIddB")


def dumps_compiled(c: CompiledOperator) -> bytes:
    """Header ``(n, z, a_q, epsilon, converged)`` then the cores and unitaries as tensor lists."""
    cores = io.dumps(list(c.q.cores))
    units = io.dumps(list(c.unitaries))
    head = _COMPILED_HEAD.pack(_COMPILED_MAGIC, c.n, c.z, c.a_q, c.epsilon, int(c.converged))
    return head + struct.pack("<Q", len(cores)) + cores + units


def loads_compiled(data: bytes) -> CompiledOperator:
    if len(data) < _COMPILED_HEAD.size + 8:
        raise io.FormatError("truncated compiled-operator file")
    magic, n, z, a_q, eps, conv = _COMPILED_HEAD.unpack_from(data)
    if magic != _COMPILED_MAGIC:
        raise io.FormatError("bad magic")
    off = _COMPILED_HEAD.size
    (size,) = struct.unpack_from("<Q", data, off)
    off += 8
    cores = io.loads(data[off:off + size])
    units = io.loads(data[off + size:])
    if len(cores) != n or len(units) != n:
        raise io.FormatError("core count does not match the header")
    return CompiledOperator(IsometricMPO(tuple(cores), z), tuple(units), a_q, eps, z, bool(conv))


def dump_compiled(c: CompiledOperator, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_compiled(c))


def load_compiled(path) -> CompiledOperator:
    with open(path, "rb") as fh:
        return loads_compiled(fh.read())
