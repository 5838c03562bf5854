"""Time stepping of the sponge-damped 2D wave equation and its validation metrics."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    DEFAULT_POLICY,
    TensorTrainOperator,
    TensorTrainState,
    apply_operator,
    decode_grid,
    grid_one_hot,
    linear_combination,
    zero_state,
)
from .core.truncation import TruncationPolicy
from .discrete import DenseWaveOperators, WavePhysics

SOURCE_CONVENTIONS = ("step", "initial")


@dataclass(frozen=True)
class SourceSpec:
    """Point source ``2 c^2 A0 cos(2 pi f t)`` injected at one grid point.

    ``convention="step"`` injects ``dt^2`` times the source every step starting
    from zero fields. ``"initial"`` instead starts from ``p(dt)`` equal to the
    un-scaled source term and injects as ``"step"`` afterwards.
    """

    amplitude: float = 1.0
    frequency: float = 100.0
    location: tuple[int, int] | None = None
    convention: str = "step"

    def __post_init__(self):
        if self.convention not in SOURCE_CONVENTIONS:
            raise ValueError(f"convention must be one of {SOURCE_CONVENTIONS}")
        if not self.frequency > 0:
            raise ValueError("frequency must be positive")

    @classmethod
    def from_physics(cls, phys: WavePhysics, convention: str = "step") -> "SourceSpec":
        return cls(phys.A0, phys.f, None, convention)

    def index(self, phys: WavePhysics) -> tuple[int, int]:
        """``(i_x, i_y)``; defaults to the grid center (physical origin)."""
        if self.location is None:
            return (1 << (phys.n_x - 1), 1 << (phys.n_y - 1))
        ix, iy = self.location
        if not (0 <= ix < 1 << phys.n_x and 0 <= iy < 1 << phys.n_y):
            raise ValueError("source location outside the grid")
        return (ix, iy)

    def weight(self, t: float, phys: WavePhysics) -> float:
        return 2.0 * phys.c**2 * self.amplitude * math.cos(2.0 * math.pi * self.frequency * t)

    def check_inside(self, phys: WavePhysics, mask: np.ndarray):
        ix, iy = self.index(phys)
        if not mask[iy, ix]:
            raise ValueError("source must lie in the undamped interior")


@dataclass(frozen=True)
class WaveState:
    p_now: TensorTrainState
    p_prev: TensorTrainState
    t: float
    k: int

    def __post_init__(self):
        if self.p_now.n != self.p_prev.n or self.p_now.axis_split != self.p_prev.axis_split:
            raise ValueError("p_now and p_prev must share n and axis_split")


def initial_state(phys: WavePhysics, src: SourceSpec) -> WaveState:
    zero = zero_state(phys.n, phys.axis_split)
    if src.convention == "step":
        return WaveState(zero, zero, 0.0, 0)
    ix, iy = src.index(phys)
    p1 = grid_one_hot(ix, iy, phys.axis_split, src.weight(phys.dt, phys))
    return WaveState(p1, zero, phys.dt, 1)


def wave_step(ws: WaveState, M1: TensorTrainOperator, M2: TensorTrainOperator, src: SourceSpec,
              phys: WavePhysics, policy: TruncationPolicy = DEFAULT_POLICY) -> WaveState:
    """``p(t + dt) = M1 p(t) - M2 p(t - dt) + dt^2 s(t)``."""
    if M1.n != ws.p_now.n or M2.n != ws.p_now.n:
        raise ValueError("operator and state sizes differ")
    ix, iy = src.index(phys)
    a = apply_operator(M1, ws.p_now, None)
    b = apply_operator(M2, ws.p_prev, None)
    s = grid_one_hot(ix, iy, phys.axis_split)
    p_next = linear_combination([1.0, -1.0, phys.dt**2 * src.weight(ws.t, phys)], [a, b, s], policy)
    return WaveState(p_next, ws.p_now, (ws.k + 1) * phys.dt, ws.k + 1)


def evolve(phys: WavePhysics, M1, M2, src: SourceSpec, steps: int,
           policy: TruncationPolicy = DEFAULT_POLICY, snapshot_every: int = 0, callback=None):
    """Run ``steps`` steps from the initial state; returns the final state and snapshots.

    ``callback(ws)`` is called after every step.
    """
    ws = initial_state(phys, src)
    snaps = []
    for _ in range(steps):
        ws = wave_step(ws, M1, M2, src, phys, policy)
        if snapshot_every and ws.k % snapshot_every == 0:
            snaps.append(ws)
        if callback is not None:
            callback(ws)
    return ws, snaps


def dense_wave_evolve(phys: WavePhysics, ops: DenseWaveOperators, src: SourceSpec, steps: int,
                      p0=None, p1=None, snapshot_every: int = 1, dense_limit: int = 24):
    """Reference iteration on dense vectors.

    Returns ``(times, fields)`` with ``fields`` of shape ``(snapshots, 2**n_y, 2**n_x)``;
    snapshot ``0`` is the initial ``p_now``. Optional ``p0``/``p1`` override the
    initial ``p(t - dt)`` and ``p(t)``; the source is still applied.
    """
    if phys.n > dense_limit:
        raise ValueError(f"n={phys.n} exceeds the dense limit {dense_limit}")
    size = 1 << phys.n
    ix, iy = src.index(phys)
    idx = (iy << phys.n_x) | ix
    prev = np.zeros(size)
    now = np.zeros(size)
    t, k = 0.0, 0
    if src.convention == "initial":
        now[idx] = src.weight(phys.dt, phys)
        t, k = phys.dt, 1
    if p0 is not None:
        prev = np.asarray(p0, dtype=float).ravel().copy()
    if p1 is not None:
        now = np.asarray(p1, dtype=float).ravel().copy()
    shape = (1 << phys.n_y, 1 << phys.n_x)
    times, fields = [t], [now.reshape(shape).copy()]
    for _ in range(steps):
        nxt = ops.M1 @ now - ops.M2 @ prev
        nxt[idx] += phys.dt**2 * src.weight(t, phys)
        prev, now = now, nxt
        k += 1
        t = k * phys.dt
        if k % snapshot_every == 0:
            times.append(t)
            fields.append(now.reshape(shape).copy())
    return np.array(times), np.array(fields)


def analytic_amplitude(r, phys: WavePhysics):
    """Far-field amplitude ``(A0 / 2 pi) sqrt(f / (c r))`` of the radiated wave."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("r must be positive")
    kr = 2.0 * math.pi * phys.f * r / phys.c
    if np.any(kr < 3):
        warnings.warn("2 pi f r / c < 3: outside the far field", stacklevel=2)
    out = phys.A0 / (2.0 * math.pi) * np.sqrt(phys.f / (phys.c * r))
    return float(out) if out.ndim == 0 else out


def point_source_amplitude(r, phys: WavePhysics):
    """Far-field amplitude radiated by a unit one-hot source on a grid with cell area ``dx dy``.

    Equals :func:`analytic_amplitude` when ``dx dy = f / c``.
    """
    r = np.asarray(r, dtype=float)
    return phys.A0 * phys.dx * phys.dy / (2.0 * math.pi) * np.sqrt(phys.c / (phys.f * r))


def diagonal_indices(phys: WavePhysics, src: SourceSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Grid points on the diagonal running from the source toward ``+x, +y``.

    Returns ``(i_x, i_y, r)``.
    """
    ix0, iy0 = src.index(phys)
    steps = np.arange(1, min((1 << phys.n_x) - ix0, (1 << phys.n_y) - iy0))
    ix, iy = ix0 + steps, iy0 + steps
    r = np.hypot(steps * phys.dx, steps * phys.dy)
    return ix, iy, r


def local_amplitude_profile(fields: np.ndarray, ix, iy, r, discard: int = 0):
    """Max-over-time ``|p|`` at the sample points, skipping the first ``discard`` snapshots."""
    fields = np.asarray(fields)
    if fields.shape[0] - discard < 1:
        raise ValueError("no snapshots left after discarding the transit")
    amp = np.max(np.abs(fields[discard:, iy, ix]), axis=0)
    return np.asarray(r), amp


def _masked(a, mask):
    a = np.asarray(a)
    if a.ndim == 1:
        a = a.reshape(mask.shape)
    return a[mask]


def fidelity_inside(state, reference, mask: np.ndarray) -> float:
    """``|<s|ref>|^2 / (|s|^2 |ref|^2)`` restricted to ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty mask")
    s, ref = _masked(_field(state), mask), _masked(_field(reference), mask)
    ns, nr = np.vdot(s, s).real, np.vdot(ref, ref).real
    if ns == 0 or nr == 0:
        return 0.0
    return float(abs(np.vdot(s, ref)) ** 2 / (ns * nr))


def mean_abs_error_inside(state, reference, mask: np.ndarray, normalize: bool = True) -> float:
    """Mean ``|s - ref|`` over ``mask``; with ``normalize`` both are first scaled to unit masked norm."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty mask")
    s, ref = _masked(_field(state), mask), _masked(_field(reference), mask)
    if normalize:
        s = s / max(np.linalg.norm(s), 1e-300)
        ref = ref / max(np.linalg.norm(ref), 1e-300)
    return float(np.mean(np.abs(s - ref)))


def _field(x):
    if isinstance(x, TensorTrainState):
        return decode_grid(x, real=False)
    return np.asarray(x)


def energy_norm(fields: np.ndarray) -> np.ndarray:
    """Squared L2 norm of every snapshot."""
    f = np.asarray(fields)
    return np.sum(np.abs(f.reshape(f.shape[0], -1)) ** 2, axis=1)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
