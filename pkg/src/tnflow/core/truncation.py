"""Truncation policies and the SVD kernels shared by states and operators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

# Relative singular-value floor used by the lossless policy; values below it
# are numerical zeros produced by the factorization itself.
LOSSLESS_FLOOR = 1e-15


@dataclass(frozen=True)
class TruncationPolicy:
    """Bond truncation rule.

    Attributes
    ----------
    max_bond : int or None
        Largest bond dimension kept. ``None`` means unbounded.
    cutoff : float
        Singular values below ``cutoff * s_max`` are discarded.
    lossless : bool
        Explicit "keep everything" flag. Only singular values at the level of
        floating point noise (``1e-15 * s_max``) are dropped.
    """

    max_bond: int | None = None
    cutoff: float = 1e-14
    lossless: bool = False

    def __post_init__(self):
        if self.max_bond is not None and self.max_bond < 1:
            raise ValueError("max_bond must be >= 1")
        if self.cutoff < 0:
            raise ValueError("cutoff must be non-negative")
        if not self.lossless and self.max_bond is None and self.cutoff == 0:
            raise ValueError("policy needs a finite max_bond, a positive cutoff, or lossless=True")

    @classmethod
    def exact(cls) -> "TruncationPolicy":
        return cls(max_bond=None, cutoff=0.0, lossless=True)

    def keep(self, s: np.ndarray) -> int:
        """Number of leading singular values retained."""
        if s.size == 0:
            return 0
        smax = s[0]
        if smax == 0:
            return 1
        floor = LOSSLESS_FLOOR if self.lossless else max(self.cutoff, LOSSLESS_FLOOR)
        k = int(np.count_nonzero(s > floor * smax))
        k = max(k, 1)
        if self.max_bond is not None and not self.lossless:
            k = min(k, self.max_bond)
        return k


LOSSLESS = TruncationPolicy.exact()
DEFAULT_POLICY = TruncationPolicy()


def svd(a: np.ndarray):
    """Thin SVD with a fallback to the slower but more robust LAPACK driver."""
    try:
        return np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd")


def truncated_svd(a: np.ndarray, policy: TruncationPolicy):
    """SVD of ``a`` truncated by ``policy``.

    Returns ``(u, s, vh, discarded)`` where ``discarded`` is the squared norm
    of the dropped singular values.
    """
    u, s, vh = svd(a)
    k = policy.keep(s)
    discarded = float(np.sum(s[k:] ** 2))
    return u[:, :k], s[:k], vh[:k, :], discarded
