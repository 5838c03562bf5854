"""Sweeps over chains of 3-leg cores ``(left, phys, right)``.

Both states and operators are stored as chains; operators merge their two
physical legs into one before calling these helpers.
"""

from __future__ import annotations

import numpy as np

from .truncation import TruncationPolicy, truncated_svd


def left_orthogonalize(cores: list[np.ndarray]) -> list[np.ndarray]:
    """QR sweep left to right. All but the last core become left isometries."""
    out = list(cores)
    for k in range(len(out) - 1):
        left, d, right = out[k].shape
        q, r = np.linalg.qr(out[k].reshape(left * d, right))
        out[k] = q.reshape(left, d, q.shape[1])
        out[k + 1] = np.tensordot(r, out[k + 1], axes=(1, 0))
    return out


def right_orthogonalize(cores: list[np.ndarray]) -> list[np.ndarray]:
    """QR sweep right to left. All but the first core become right isometries."""
    out = list(cores)
    for k in range(len(out) - 1, 0, -1):
        left, d, right = out[k].shape
        q, r = np.linalg.qr(out[k].reshape(left, d * right).T)
        out[k] = q.T.reshape(q.shape[1], d, right)
        out[k - 1] = np.tensordot(out[k - 1], r.T, axes=(2, 0))
    return out


def compress(cores: list[np.ndarray], policy: TruncationPolicy) -> tuple[list[np.ndarray], float]:
    """Truncate a chain to ``policy``.

    Returns the new cores (the first core carries the norm, all others are
    right isometries) and the discarded weight, i.e. the sum over bonds of the
    squared dropped singular values relative to the squared norm.
    """
    out = left_orthogonalize(cores)
    discarded = 0.0
    for k in range(len(out) - 1, 0, -1):
        left, d, right = out[k].shape
        mat = out[k].reshape(left, d * right)
        u, s, vh, dropped = truncated_svd(mat, policy)
        total = float(np.sum(s**2)) + dropped
        if total > 0:
            discarded += dropped / total
        out[k] = vh.reshape(len(s), d, right)
        out[k - 1] = np.tensordot(out[k - 1], u * s, axes=(2, 0))
    return out, discarded


def contract_dense(cores: list[np.ndarray]) -> np.ndarray:
    """Contract a chain with boundary bonds 1 into a flat vector."""
    acc = cores[0].reshape(-1, cores[0].shape[2])
    for core in cores[1:]:
        left, d, right = core.shape
        acc = (acc @ core.reshape(left, d * right)).reshape(-1, right)
    return acc.reshape(-1)


def overlap(bra: list[np.ndarray], ket: list[np.ndarray]) -> complex:
    """``<bra|ket>`` with the bra complex conjugated."""
    env = np.ones((1, 1), dtype=complex)
    for a, b in zip(bra, ket):
        # env[a', b'] = sum env[a, b] conj(A[a, s, a']) B[b, s, b']
        tmp = np.tensordot(env, b, axes=(1, 0))
        env = np.tensordot(a.conj(), tmp, axes=([0, 1], [0, 1]))
    return complex(env[0, 0])
