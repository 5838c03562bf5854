"""Matrix product operators and their action on states.

Operator cores have legs ``(left, out, in, right)``; the dense matrix element
``O[i, j]`` pairs the output (row) digits of ``i`` with the input (column)
digits of ``j`` using the same site ordering as :mod:`tnflow.core.state`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import compress
from .state import TensorTrainState, _normalized, zero_state
from .truncation import DEFAULT_POLICY, TruncationPolicy

DENSE_OPERATOR_LIMIT = 12


@dataclass(frozen=True, eq=False)
class TensorTrainOperator:
    cores: tuple

    def __post_init__(self):
        cores = []
        for k, c in enumerate(self.cores):
            c = np.array(c, dtype=complex, copy=True)
            if c.ndim != 4 or c.shape[1] != 2 or c.shape[2] != 2:
                raise ValueError(f"core {k} has shape {c.shape}; expected (left, 2, 2, right)")
            c.flags.writeable = False
            cores.append(c)
        if not cores:
            raise ValueError("an operator needs at least one core")
        if cores[0].shape[0] != 1 or cores[-1].shape[3] != 1:
            raise ValueError("boundary bonds must be 1")
        for k in range(len(cores) - 1):
            if cores[k].shape[3] != cores[k + 1].shape[0]:
                raise ValueError(f"bond mismatch between cores {k} and {k + 1}")
        object.__setattr__(self, "cores", tuple(cores))

    @property
    def n(self) -> int:
        return len(self.cores)

    site_count = n

    @property
    def bonds(self) -> list[int]:
        return [c.shape[3] for c in self.cores[:-1]]

    @property
    def max_bond(self) -> int:
        return max(self.bonds, default=1)

    def __matmul__(self, other):
        if isinstance(other, TensorTrainOperator):
            return compose_operators(self, other)
        if isinstance(other, TensorTrainState):
            return apply_operator(self, other)
        return NotImplemented

    def __mul__(self, alpha):
        cores = list(self.cores)
        cores[0] = cores[0] * alpha
        return TensorTrainOperator(tuple(cores))

    __rmul__ = __mul__

    def __add__(self, other):
        return scale_add_operators(1.0, self, 1.0, other)

    def __sub__(self, other):
        return scale_add_operators(1.0, self, -1.0, other)

    def __repr__(self):
        return f"TensorTrainOperator(n={self.n}, bonds={self.bonds})"


def _merged(op: TensorTrainOperator) -> list[np.ndarray]:
    return [c.reshape(c.shape[0], 4, c.shape[3]) for c in op.cores]


def _unmerged(cores: list[np.ndarray]) -> TensorTrainOperator:
    return TensorTrainOperator(tuple(c.reshape(c.shape[0], 2, 2, c.shape[2]) for c in cores))


def compress_operator(op: TensorTrainOperator, policy: TruncationPolicy = DEFAULT_POLICY) -> TensorTrainOperator:
    """SVD compression of an operator viewed as a chain with physical dimension 4."""
    cores, _ = compress(_merged(op), policy)
    return _unmerged(cores)


def operator_to_dense(op: TensorTrainOperator, dense_limit: int = DENSE_OPERATOR_LIMIT) -> np.ndarray:
    if op.n > dense_limit:
        raise ValueError(f"n={op.n} exceeds the dense operator limit {dense_limit}")
    acc = np.ones((1, 1, 1), dtype=complex)  # (rows, cols, bond)
    for c in op.cores:
        t = np.tensordot(acc, c, axes=(2, 0))  # rows, cols, out, in, right
        r, q = t.shape[0], t.shape[1]
        t = t.transpose(0, 2, 1, 3, 4)
        acc = t.reshape(r * 2, q * 2, c.shape[3])
    return acc[:, :, 0]


def identity_operator(n: int) -> TensorTrainOperator:
    eye = np.eye(2, dtype=complex).reshape(1, 2, 2, 1)
    return TensorTrainOperator(tuple(eye for _ in range(n)))


def zero_operator(n: int) -> TensorTrainOperator:
    return identity_operator(n) * 0.0


def operator_from_dense(matrix: np.ndarray, policy: TruncationPolicy = DEFAULT_POLICY) -> TensorTrainOperator:
    """Factorize a dense ``2**n x 2**n`` matrix (small ``n`` only)."""
    m = np.asarray(matrix, dtype=complex)
    size = m.shape[0]
    n = size.bit_length() - 1
    if m.shape != (size, size) or (1 << n) != size:
        raise ValueError("matrix must be square with a power-of-two size")
    t = m.reshape([2] * (2 * n))
    # interleave (out_0, in_0, out_1, in_1, ...)
    perm = [x for k in range(n) for x in (k, n + k)]
    t = t.transpose(perm).reshape(1, -1)
    cores = []
    rest = t
    for _ in range(n - 1):
        left = rest.shape[0]
        mat = rest.reshape(left * 4, -1)
        u, s, vh = np.linalg.svd(mat, full_matrices=False)
        k = max(1, int(np.count_nonzero(s > 1e-15 * max(s[0], 1e-300))))
        cores.append(u[:, :k].reshape(left, 4, k))
        rest = s[:k, None] * vh[:k]
    cores.append(rest.reshape(rest.shape[0], 4, 1))
    cores, _ = compress(cores, policy)
    return _unmerged(cores)


def apply_operator(op: TensorTrainOperator, s: TensorTrainState,
                   policy: TruncationPolicy | None = DEFAULT_POLICY) -> TensorTrainState:
    """``O |s>`` followed by compression (skipped when ``policy`` is None).

    The exact product has bonds ``zeta * chi``; the QR/SVD compression sweep
    then costs O(n (zeta chi)^3) in the worst case.
    """
    if op.n != s.n:
        raise ValueError(f"shape mismatch: operator has {op.n} sites, state has {s.n}")
    cores = []
    for w, a in zip(op.cores, s.cores):
        lw, _, _, rw = w.shape
        la, _, ra = a.shape
        c = np.tensordot(w, a, axes=(2, 1))  # lw, out, rw, la, ra
        c = c.transpose(0, 3, 1, 2, 4).reshape(lw * la, 2, rw * ra)
        cores.append(c)
    if policy is None:
        return TensorTrainState(tuple(cores), s.prefactor, s.axis_split)
    out, discarded = compress(cores, policy)
    return _normalized(out, s.prefactor, s.axis_split, discarded)


def compose_operators(a: TensorTrainOperator, b: TensorTrainOperator,
                      policy: TruncationPolicy | None = DEFAULT_POLICY) -> TensorTrainOperator:
    """Matrix product ``A B``."""
    if a.n != b.n:
        raise ValueError(f"shape mismatch: {a.n} vs {b.n} sites")
    cores = []
    for x, y in zip(a.cores, b.cores):
        lx, _, _, rx = x.shape
        ly, _, _, ry = y.shape
        c = np.tensordot(x, y, axes=(2, 1))  # lx, out, rx, ly, in, ry
        c = c.transpose(0, 3, 1, 4, 2, 5).reshape(lx * ly, 2, 2, rx * ry)
        cores.append(c)
    op = TensorTrainOperator(tuple(cores))
    return op if policy is None else compress_operator(op, policy)


def scale_add_operators(alpha, a: TensorTrainOperator, beta, b: TensorTrainOperator,
                        policy: TruncationPolicy | None = DEFAULT_POLICY) -> TensorTrainOperator:
    """``alpha A + beta B``."""
    if a.n != b.n:
        raise ValueError(f"shape mismatch: {a.n} vs {b.n} sites")
    n = a.n
    if n == 1:
        return TensorTrainOperator((alpha * a.cores[0] + beta * b.cores[0],))
    cores = []
    for k, (x, y) in enumerate(zip(a.cores, b.cores)):
        if k == 0:
            c = np.concatenate([alpha * x, beta * y], axis=3)
        elif k == n - 1:
            c = np.concatenate([x, y], axis=0)
        else:
            lx, rx = x.shape[0], x.shape[3]
            ly, ry = y.shape[0], y.shape[3]
            c = np.zeros((lx + ly, 2, 2, rx + ry), dtype=complex)
            c[:lx, :, :, :rx] = x
            c[lx:, :, :, rx:] = y
        cores.append(c)
    op = TensorTrainOperator(tuple(cores))
    return op if policy is None else compress_operator(op, policy)


def sum_operators(terms, policy: TruncationPolicy = DEFAULT_POLICY) -> TensorTrainOperator:
    """Sum of ``(coefficient, operator)`` pairs, compressing after each addition."""
    terms = list(terms)
    coeff, acc = terms[0]
    acc = acc * coeff
    for coeff, op in terms[1:]:
        acc = scale_add_operators(1.0, acc, coeff, op, policy)
    return compress_operator(acc, policy)


def diag_operator(m: TensorTrainState) -> TensorTrainOperator:
    """Diagonal operator ``diag(decode(m))``: each core is extended by a delta tensor."""
    delta = np.zeros((2, 2, 2))
    delta[0, 0, 0] = delta[1, 1, 1] = 1.0
    cores = []
    for k, a in enumerate(m.cores):
        c = np.einsum("lsr,sab->labr", a, delta)
        if k == 0:
            c = c * m.prefactor
        cores.append(c)
    return TensorTrainOperator(tuple(cores))


def pointwise_multiply(a: TensorTrainState, b: TensorTrainState,
                       policy: TruncationPolicy | None = DEFAULT_POLICY) -> TensorTrainState:
    """Elementwise product, computed as ``diag(a) |b>``."""
    if a.n != b.n or a.axis_split != b.axis_split:
        raise ValueError("shape mismatch")
    if a.prefactor == 0 or b.prefactor == 0:
        return zero_state(a.n, a.axis_split)
    return apply_operator(diag_operator(a), b, policy)


def kron_operators(*ops: TensorTrainOperator) -> TensorTrainOperator:
    """Tensor product of operators on consecutive site blocks (first = most significant)."""
    cores = []
    for op in ops:
        cores.extend(op.cores)
    return TensorTrainOperator(tuple(cores))


def adjoint(op: TensorTrainOperator) -> TensorTrainOperator:
    return TensorTrainOperator(tuple(c.conj().transpose(0, 2, 1, 3) for c in op.cores))


def transpose(op: TensorTrainOperator) -> TensorTrainOperator:
    return TensorTrainOperator(tuple(c.transpose(0, 2, 1, 3) for c in op.cores))


def operator_inner(a: TensorTrainOperator, b: TensorTrainOperator) -> complex:
    """Frobenius inner product ``tr(A^dagger B)``."""
    env = np.ones((1, 1), dtype=complex)
    for x, y in zip(a.cores, b.cores):
        tmp = np.tensordot(env, y, axes=(1, 0))  # la, out, in, ry
        env = np.tensordot(x.conj(), tmp, axes=([0, 1, 2], [0, 1, 2]))
    return complex(env[0, 0])


def operator_norm_fro(a: TensorTrainOperator) -> float:
    return float(np.sqrt(max(operator_inner(a, a).real, 0.0)))
