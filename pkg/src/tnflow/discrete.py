"""Wave-equation physics, sponge absorption profiles and the two time-step operators.

The scheme advances ``p_tt + gamma p_t = c^2 (p_xx + p_yy) + s`` by

    p(t + dt) = M1 p(t) - M2 p(t - dt) + dt^2 s(t)

with ``M1 = 2 I + dt^2 c^2 (Dxx + Dyy) - dt Gamma`` and ``M2 = I - dt Gamma``.
``damping="printed"`` swaps the ``dt Gamma`` in ``M1`` for ``dt^2 Gamma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import (
    TensorTrainOperator,
    TensorTrainState,
    add,
    compress_operator,
    constant_state,
    diag_operator,
    encode_state,
    identity_operator,
    scale_add_operators,
)
from .core.truncation import TruncationPolicy
from .stencils import OPERATOR_POLICY, StencilSpec, embed_matrix_axis, fd_mpo_2d, stencil_matrix

DAMPING_MODES = ("consistent", "printed")


@dataclass(frozen=True)
class WavePhysics:
    """Acoustic medium, source and grid.

    ``L`` defaults to ``2**(n_x - 1) * sqrt(f / c)``, i.e. cell area ``f / c``:
    with that spacing a unit-weight point source radiates exactly the
    free-space amplitude returned by :func:`tnflow.wave.analytic_amplitude`.
    """

    rho: float = 1.2
    c: float = 340.2
    u_bar: float = 0.0
    A0: float = 1.0
    f: float = 100.0
    dt: float = 1e-4
    n_x: int = 6
    n_y: int = 6
    L: float | None = None

    def __post_init__(self):
        if self.u_bar != 0.0:
            raise ValueError("only the u_bar = 0 wave-equation limit is supported")
        for name in ("rho", "c", "f", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_x < 2 or self.n_y < 2:
            raise ValueError("need at least 2 sites per axis")
        if self.L is None:
            object.__setattr__(self, "L", 2.0 ** (self.n_x - 1) * math.sqrt(self.f / self.c))
        if not self.L > 0:
            raise ValueError("L must be positive")
        if not self.cfl < 1.0:
            raise ValueError(f"CFL violated: c*dt/min(dx, dy) = {self.cfl:.4g} must be < 1")

    @property
    def axis_split(self) -> tuple[int, int]:
        return (self.n_x, self.n_y)

    @property
    def n(self) -> int:
        return self.n_x + self.n_y

    @property
    def dx(self) -> float:
        return 2.0 * self.L / (1 << self.n_x)

    @property
    def dy(self) -> float:
        return 2.0 * self.L / (1 << self.n_y)

    @property
    def cfl(self) -> float:
        return self.c * self.dt / min(self.dx, self.dy)

    @property
    def wavelength(self) -> float:
        return self.c / self.f

    def x_coords(self) -> np.ndarray:
        return -self.L + self.dx * np.arange(1 << self.n_x)

    def y_coords(self) -> np.ndarray:
        return -self.L + self.dy * np.arange(1 << self.n_y)


@dataclass(frozen=True)
class AxisSponge:
    """Absorption along one axis: ramps up from the onsets toward the boundaries."""

    gamma_l_max: float
    gamma_r_max: float
    x_l: float
    x_r: float
    x_lb: float
    x_rb: float
    c_b: float = 1.0

    def __post_init__(self):
        if not self.x_lb < self.x_l < self.x_r < self.x_rb:
            raise ValueError("sponge coordinates must satisfy x_lb < x_l < x_r < x_rb")
        if not self.c_b > 0:
            raise ValueError("c_b must be positive")
        if self.gamma_l_max < 0 or self.gamma_r_max < 0:
            raise ValueError("absorption rates must be non-negative")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        left = x < self.x_l
        s = (self.x_l - x[left]) / (self.x_l - self.x_lb)
        g[left] = self.gamma_l_max * np.expm1(s**self.c_b) / (math.e - 1.0)
        right = x > self.x_r
        s = (x[right] - self.x_r) / (self.x_rb - self.x_r)
        g[right] = self.gamma_r_max * np.expm1(s**self.c_b) / (math.e - 1.0)
        return g


@dataclass(frozen=True)
class SpongeSpec:
    """``gamma(x, y) = gamma_x(x) + gamma_y(y)``."""

    x: AxisSponge
    y: AxisSponge

    @classmethod
    def default(cls, phys: WavePhysics, gamma_max: float = 1e3, c_b: float = 1.0,
                fraction: float = 0.25) -> "SpongeSpec":
        """Sponges on the outer ``fraction`` of every side.

        With ``fraction = 0.25`` the onsets fall on two-digit index prefixes, and
        with ``c_b = 1`` the ramp is an exponential in the grid index; the
        profile then has an exact operator bond dimension of 4 for every ``n``.
        """
        return cls(_axis_default(phys.x_coords(), gamma_max, c_b, fraction),
                   _axis_default(phys.y_coords(), gamma_max, c_b, fraction))

    @classmethod
    def none(cls, phys: WavePhysics) -> "SpongeSpec":
        return cls.default(phys, gamma_max=0.0)

    @property
    def gamma_max(self) -> float:
        return max(self.x.gamma_l_max, self.x.gamma_r_max, self.y.gamma_l_max, self.y.gamma_r_max)

    def interior_mask(self, phys: WavePhysics) -> np.ndarray:
        """Boolean ``(2**n_y, 2**n_x)`` mask of the undamped region."""
        x, y = phys.x_coords(), phys.y_coords()
        mx = (x > self.x.x_l) & (x < self.x.x_r)
        my = (y > self.y.x_l) & (y < self.y.x_r)
        return my[:, None] & mx[None, :]


def _axis_default(coords, gamma_max, c_b, fraction) -> AxisSponge:
    size = len(coords)
    width = int(round(fraction * size))
    if not 0 < width < size // 2:
        raise ValueError("sponge fraction leaves no interior")
    return AxisSponge(gamma_max, gamma_max, float(coords[width]), float(coords[size - 1 - width]),
                      float(coords[0]), float(coords[-1]), c_b)


def sponge_values(sponge: SpongeSpec, phys: WavePhysics) -> np.ndarray:
    """Dense ``(2**n_y, 2**n_x)`` array of ``gamma``."""
    return sponge.y(phys.y_coords())[:, None] + sponge.x(phys.x_coords())[None, :]


def sponge_profile(sponge: SpongeSpec, phys: WavePhysics,
                   policy: TruncationPolicy = OPERATOR_POLICY) -> TensorTrainState:
    """MPS of ``gamma`` built from the two one-axis profiles without forming the 2D array."""
    nx, ny = phys.axis_split
    gx = encode_state(sponge.x(phys.x_coords()), None, policy)
    gy = encode_state(sponge.y(phys.y_coords()), None, policy)
    ones_x, ones_y = constant_state(nx), constant_state(ny)
    term_x = TensorTrainState(ones_y.cores + gx.cores, gx.prefactor, phys.axis_split)
    term_y = TensorTrainState(gy.cores + ones_x.cores, gy.prefactor, phys.axis_split)
    return add(term_x, term_y, policy)


def sponge_mpo(sponge: SpongeSpec, phys: WavePhysics,
               policy: TruncationPolicy = OPERATOR_POLICY) -> TensorTrainOperator:
    return diag_operator(sponge_profile(sponge, phys, policy))


def laplacian_mpo(phys: WavePhysics, accuracy: int, boundary: str = "dirichlet",
                  policy: TruncationPolicy = OPERATOR_POLICY) -> TensorTrainOperator:
    dxx = fd_mpo_2d(StencilSpec(2, accuracy, "x", boundary, phys.dx), phys.axis_split, policy)
    dyy = fd_mpo_2d(StencilSpec(2, accuracy, "y", boundary, phys.dy), phys.axis_split, policy)
    return scale_add_operators(1.0, dxx, 1.0, dyy, policy)


def _damping_factor(phys: WavePhysics, damping: str) -> float:
    if damping not in DAMPING_MODES:
        raise ValueError(f"damping must be one of {DAMPING_MODES}")
    return phys.dt if damping == "consistent" else phys.dt**2


def build_M1(phys: WavePhysics, sponge: SpongeSpec, accuracy: int,
             policy: TruncationPolicy = OPERATOR_POLICY, boundary: str = "dirichlet",
             damping: str = "consistent") -> TensorTrainOperator:
    """``2 I + dt^2 c^2 (Dxx + Dyy) - dt Gamma``."""
    lap = laplacian_mpo(phys, accuracy, boundary, policy)
    op = scale_add_operators(2.0, identity_operator(phys.n), phys.dt**2 * phys.c**2, lap, policy)
    if sponge.gamma_max > 0:
        op = scale_add_operators(1.0, op, -_damping_factor(phys, damping),
                                 sponge_mpo(sponge, phys, policy), policy)
    return compress_operator(op, policy)


def build_M2(phys: WavePhysics, sponge: SpongeSpec,
             policy: TruncationPolicy = OPERATOR_POLICY) -> TensorTrainOperator:
    """``I - dt Gamma`` (diagonal)."""
    eye = identity_operator(phys.n)
    if sponge.gamma_max == 0:
        return eye
    return scale_add_operators(1.0, eye, -phys.dt, sponge_mpo(sponge, phys, policy), policy)


@dataclass(frozen=True)
class DenseWaveOperators:
    """Sparse-matrix assembly of the same scheme, used as the reference route."""

    M1: sp.csr_matrix
    M2: sp.csr_matrix
    gamma: np.ndarray = field(repr=False)


def dense_wave_operators(phys: WavePhysics, sponge: SpongeSpec, accuracy: int,
                         boundary: str = "dirichlet", damping: str = "consistent") -> DenseWaveOperators:
    nx, ny = phys.axis_split
    dxx = embed_matrix_axis(stencil_matrix(1 << nx, StencilSpec(2, accuracy, "x", boundary, phys.dx)),
                            "x", phys.axis_split)
    dyy = embed_matrix_axis(stencil_matrix(1 << ny, StencilSpec(2, accuracy, "y", boundary, phys.dy)),
                            "y", phys.axis_split)
    gamma = sponge_values(sponge, phys).ravel()
    eye = sp.identity(1 << phys.n, format="csr")
    g = sp.diags(gamma)
    m1 = 2.0 * eye + phys.dt**2 * phys.c**2 * (dxx + dyy) - _damping_factor(phys, damping) * g
    m2 = eye - phys.dt * g
    return DenseWaveOperators(m1.tocsr(), m2.tocsr(), gamma)
