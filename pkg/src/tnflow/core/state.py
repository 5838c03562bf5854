"""Matrix product states over binary-digit sites.

Index convention: a field ``F[i_y, i_x]`` on a ``2**n_y x 2**n_x`` grid is
flattened row-major, so the flat index is ``i_y * 2**n_x + i_x``. The first
``n_y`` sites hold the digits of ``i_y`` (most significant first), the
remaining ``n_x`` sites hold the digits of ``i_x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import compress, contract_dense, left_orthogonalize, overlap, right_orthogonalize
from .truncation import DEFAULT_POLICY, TruncationPolicy, truncated_svd

DENSE_LIMIT = 24


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TensorTrainState:
    """Chain of ``(left, 2, right)`` complex cores times a scalar prefactor.

    ``axis_split`` is ``(n_x, n_y)``; ``None`` means a one-dimensional layout
    with all sites on the x axis.
    """

    cores: tuple
    prefactor: complex = 1.0
    axis_split: tuple[int, int] | None = None
    discarded_weight: float = field(default=0.0, compare=False)

    def __post_init__(self):
        cores = tuple(_frozen(c) for c in self.cores)
        if not cores:
            raise ValueError("a state needs at least one core")
        for k, c in enumerate(cores):
            if c.ndim != 3 or c.shape[1] != 2:
                raise ValueError(f"core {k} has shape {c.shape}; expected (left, 2, right)")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ValueError("boundary bonds must be 1")
        for k in range(len(cores) - 1):
            if cores[k].shape[2] != cores[k + 1].shape[0]:
                raise ValueError(f"bond mismatch between cores {k} and {k + 1}")
        split = self.axis_split
        if split is None:
            split = (len(cores), 0)
        split = (int(split[0]), int(split[1]))
        if split[0] < 0 or split[1] < 0 or sum(split) != len(cores):
            raise ValueError(f"axis_split {split} inconsistent with {len(cores)} sites")
        object.__setattr__(self, "cores", cores)
        object.__setattr__(self, "axis_split", split)
        object.__setattr__(self, "prefactor", complex(self.prefactor))

    @property
    def n(self) -> int:
        return len(self.cores)

    @property
    def bonds(self) -> list[int]:
        """Internal bond dimensions (length ``n - 1``)."""
        return [c.shape[2] for c in self.cores[:-1]]

    @property
    def max_bond(self) -> int:
        return max(self.bonds, default=1)

    def with_prefactor(self, prefactor: complex) -> "TensorTrainState":
        return TensorTrainState(self.cores, prefactor, self.axis_split)

    def __mul__(self, alpha):
        return TensorTrainState(self.cores, self.prefactor * alpha, self.axis_split)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, -other)

    def __repr__(self):
        return (f"TensorTrainState(n={self.n}, axis_split={self.axis_split}, "
                f"bonds={self.bonds}, prefactor={self.prefactor:.6g})")


def _check_split(n: int, axis_split) -> tuple[int, int]:
    if axis_split is None:
        return (n, 0)
    if sum(axis_split) != n:
        raise ValueError(f"axis_split {tuple(axis_split)} inconsistent with n={n}")
    return tuple(axis_split)


def _normalized(cores: list[np.ndarray], prefactor: complex, axis_split, discarded=0.0):
    """Move the norm of the (orthogonality-center) first core into the prefactor."""
    nrm = np.linalg.norm(cores[0])
    if nrm == 0:
        return zero_state(len(cores), axis_split)
    cores[0] = cores[0] / nrm
    return TensorTrainState(tuple(cores), prefactor * nrm, axis_split, discarded)


def encode_state(values, axis_split=None, policy: TruncationPolicy = DEFAULT_POLICY) -> TensorTrainState:
    """Factorize a length ``2**n`` vector by successive SVDs."""
    v = np.asarray(values, dtype=complex).reshape(-1)
    size = v.size
    n = size.bit_length() - 1
    if size < 2 or (1 << n) != size:
        raise ValueError(f"length {size} is not a power of two >= 2")
    split = _check_split(n, axis_split)
    nrm = np.linalg.norm(v)
    if nrm == 0:
        return zero_state(n, split)
    rest = (v / nrm).reshape(1, -1)
    cores = []
    discarded = 0.0
    for _ in range(n - 1):
        left = rest.shape[0]
        mat = rest.reshape(left * 2, -1)
        u, s, vh, dropped = truncated_svd(mat, policy)
        discarded += dropped / (float(np.sum(s**2)) + dropped)
        cores.append(u.reshape(left, 2, len(s)))
        rest = s[:, None] * vh
    cores.append(rest.reshape(rest.shape[0], 2, 1))
    # the last core holds the remaining norm; move the center to the front
    cores = right_orthogonalize(cores)
    return _normalized(cores, nrm, split, discarded)


def decode_state(s: TensorTrainState, dense_limit: int = DENSE_LIMIT, real: bool = False) -> np.ndarray:
    """Dense vector ``prefactor * contraction``.

    With ``real=True`` the result is checked to have ``|Im| <= 1e-10`` (relative
    to the largest entry) and returned as a float array.
    """
    if s.n > dense_limit:
        raise ValueError(f"n={s.n} exceeds the dense limit {dense_limit}")
    v = s.prefactor * contract_dense(list(s.cores))
    if real:
        scale = max(np.max(np.abs(v)), 1.0)
        if np.max(np.abs(v.imag), initial=0.0) > 1e-10 * scale:
            raise ValueError("decoded state has a non-negligible imaginary part")
        return v.real.copy()
    return v


def decode_grid(s: TensorTrainState, real: bool = True) -> np.ndarray:
    """Decode to a ``(2**n_y, 2**n_x)`` array."""
    nx, ny = s.axis_split
    return decode_state(s, real=real).reshape(1 << ny, 1 << nx)


def truncate(s: TensorTrainState, policy: TruncationPolicy = DEFAULT_POLICY) -> TensorTrainState:
    """Re-compress ``s``; the result records its discarded weight."""
    cores, discarded = compress(list(s.cores), policy)
    return _normalized(cores, s.prefactor, s.axis_split, discarded)


def canonicalize(s: TensorTrainState, center: int = 0) -> TensorTrainState:
    """Mixed-canonical form with orthogonality center at site ``center``.

    Cores left of the center are left isometries, cores right of it are right
    isometries, and the center has unit Frobenius norm.
    """
    if not 0 <= center < s.n:
        raise ValueError("center out of range")
    cores = list(s.cores)
    left, right = cores[: center + 1], cores[center:]
    left = left_orthogonalize(left)
    right[0] = left[-1]
    right = right_orthogonalize(right)
    cores = left[:-1] + right
    nrm = np.linalg.norm(cores[center])
    if nrm == 0:
        return zero_state(s.n, s.axis_split)
    cores[center] = cores[center] / nrm
    return TensorTrainState(tuple(cores), s.prefactor * nrm, s.axis_split)


def _check_pair(a: TensorTrainState, b: TensorTrainState):
    if a.n != b.n or a.axis_split != b.axis_split:
        raise ValueError(f"shape mismatch: n={a.n}/{b.n}, axis_split={a.axis_split}/{b.axis_split}")


def add(a: TensorTrainState, b: TensorTrainState, policy: TruncationPolicy | None = DEFAULT_POLICY) -> TensorTrainState:
    """``a + b``. With ``policy=None`` the block-diagonal sum is returned untruncated."""
    _check_pair(a, b)
    n = a.n
    if n == 1:
        core = a.prefactor * a.cores[0] + b.prefactor * b.cores[0]
        return _normalized([core], 1.0, a.axis_split)
    cores = []
    for k, (x, y) in enumerate(zip(a.cores, b.cores)):
        if k == 0:
            c = np.concatenate([a.prefactor * x, b.prefactor * y], axis=2)
        elif k == n - 1:
            c = np.concatenate([x, y], axis=0)
        else:
            lx, _, rx = x.shape
            ly, _, ry = y.shape
            c = np.zeros((lx + ly, 2, rx + ry), dtype=complex)
            c[:lx, :, :rx] = x
            c[lx:, :, rx:] = y
        cores.append(c)
    if policy is None:
        return TensorTrainState(tuple(cores), 1.0, a.axis_split)
    out, discarded = compress(cores, policy)
    return _normalized(out, 1.0, a.axis_split, discarded)


def linear_combination(coeffs, states, policy: TruncationPolicy = DEFAULT_POLICY) -> TensorTrainState:
    """``sum_k coeffs[k] * states[k]`` with a single final compression."""
    states = list(states)
    acc = states[0] * coeffs[0]
    for c, s in zip(coeffs[1:], states[1:]):
        acc = add(acc, s * c, policy=None)
    return truncate(acc, policy)


def inner(a: TensorTrainState, b: TensorTrainState) -> complex:
    """``<a|b>`` including prefactors (``a`` is conjugated)."""
    _check_pair(a, b)
    return np.conj(a.prefactor) * b.prefactor * overlap(list(a.cores), list(b.cores))


def norm(a: TensorTrainState) -> float:
    return float(np.sqrt(max(inner(a, a).real, 0.0)))


def zero_state(n: int, axis_split=None) -> TensorTrainState:
    cores = [np.zeros((1, 2, 1), dtype=complex) for _ in range(n)]
    cores[0][0, 0, 0] = 1.0
    return TensorTrainState(tuple(cores), 0.0, _check_split(n, axis_split))


def product_state(site_vectors, prefactor: complex = 1.0, axis_split=None) -> TensorTrainState:
    """Bond-1 state from one length-2 vector per site."""
    cores = [np.asarray(v, dtype=complex).reshape(1, 2, 1) for v in site_vectors]
    return TensorTrainState(tuple(cores), prefactor, _check_split(len(cores), axis_split))


def constant_state(n: int, value: complex = 1.0, axis_split=None) -> TensorTrainState:
    return product_state([[1.0, 1.0]] * n, value, axis_split)


def basis_bits(index: int, n: int) -> list[int]:
    """Binary digits of ``index`` on ``n`` sites, most significant first."""
    if not 0 <= index < (1 << n):
        raise ValueError(f"index {index} out of range for {n} sites")
    return [(index >> (n - 1 - k)) & 1 for k in range(n)]


def one_hot(index: int, n: int, axis_split=None, amplitude: complex = 1.0) -> TensorTrainState:
    """Basis state ``amplitude * |index>``."""
    vecs = [[1.0, 0.0] if b == 0 else [0.0, 1.0] for b in basis_bits(index, n)]
    return product_state(vecs, amplitude, axis_split)


def grid_one_hot(ix: int, iy: int, axis_split, amplitude: complex = 1.0) -> TensorTrainState:
    """Basis state for grid point ``(i_x, i_y)``; y digits are the most significant."""
    nx, ny = axis_split
    return one_hot((iy << nx) | ix, nx + ny, axis_split, amplitude)


def basis_label(index: int, n: int) -> str:
    return "".join(str(b) for b in basis_bits(index, n))


def isometry_residuals(s: TensorTrainState, center: int) -> list[float]:
    """Max-norm deviation from the isometry condition for every non-center core."""
    res = []
    for k, c in enumerate(s.cores):
        left, d, right = c.shape
        if k < center:
            m = c.reshape(left * d, right)
            res.append(float(np.max(np.abs(m.conj().T @ m - np.eye(right)))))
        elif k > center:
            m = c.reshape(left, d * right)
            res.append(float(np.max(np.abs(m @ m.conj().T - np.eye(left)))))
    return res


def nvps(states) -> int:
    """Number of variables parameterizing one or several states (sum of core sizes)."""
    if isinstance(states, TensorTrainState):
        states = [states]
    return int(sum(c.size for s in states for c in s.cores))


def compression_rate(count: int, n: int) -> float:
    """``nvps / 2**n``: fraction of the dense variable count."""
    return count / float(1 << n)
