"""Exact statevector emulation of Hadamard tests on compiled operators.

Qubit layout, most significant first: ancilla (optional), ``z`` auxiliary
qubits, ``n`` state qubits. State qubit ``j`` (0-based) carries the ``j``-th
most significant digit of the field index, matching the MPS site order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .compile import CompiledOperator

_H = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)


class VanishingSuccessError(RuntimeError):
    """The post-selected auxiliary branch has zero probability."""


@dataclass
class StateVector:
    amplitudes: np.ndarray
    n: int
    z: int = 0
    ancilla: bool = False

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if self.amplitudes.size != self.dim:
            raise ValueError(f"expected {self.dim} amplitudes, got {self.amplitudes.size}")

    @property
    def dim(self) -> int:
        return (2 if self.ancilla else 1) << (self.z + self.n)

    def tensor(self) -> np.ndarray:
        """View as ``(ancilla, aux, state)``."""
        return self.amplitudes.reshape(2 if self.ancilla else 1, 1 << self.z, 1 << self.n)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "StateVector":
        return StateVector(self.amplitudes.copy(), self.n, self.z, self.ancilla)

    @classmethod
    def zero(cls, n: int, z: int = 0, ancilla: bool = False) -> "StateVector":
        amps = np.zeros((2 if ancilla else 1) << (z + n), dtype=complex)
        amps[0] = 1.0
        return cls(amps, n, z, ancilla)

    @classmethod
    def embed(cls, psi, z: int = 0, ancilla: bool = False, anc_state=(1.0, 0.0)) -> "StateVector":
        """``anc_state (x) |0>_aux (x) psi``."""
        psi = np.asarray(psi, dtype=complex).reshape(-1)
        n = psi.size.bit_length() - 1
        aux = np.zeros(1 << z, dtype=complex)
        aux[0] = 1.0
        amps = np.kron(aux, psi)
        if ancilla:
            amps = np.kron(np.asarray(anc_state, dtype=complex), amps)
        return cls(amps, n, z, ancilla)


def _check_layout(c: CompiledOperator, sv: StateVector):
    if c.n != sv.n or c.z != sv.z:
        raise ValueError(f"layout mismatch: operator (n={c.n}, z={c.z}) vs state (n={sv.n}, z={sv.z})")


def apply_compiled(c: CompiledOperator, sv: StateVector, controlled_on_ancilla: bool = False) -> StateVector:
    """Apply ``U_n ... U_1``; when controlled, only the ancilla ``|0>`` branch is acted on."""
    _check_layout(c, sv)
    if controlled_on_ancilla and not sv.ancilla:
        raise ValueError("controlled application needs an ancilla")
    t = sv.tensor().copy()
    branch = t[:1] if controlled_on_ancilla else t
    d = 1 << c.z
    for j, u in enumerate(c.unitaries):
        u4 = u.reshape(d, 2, d, 2)
        b = branch.reshape(branch.shape[0], d, 1 << j, 2, 1 << (c.n - 1 - j))
        branch = np.einsum("AoBi,cBlir->cAlor", u4, b, optimize=True)
    branch = branch.reshape(-1, d, 1 << c.n)
    if controlled_on_ancilla:
        t[:1] = branch
    else:
        t = branch
    return StateVector(t.reshape(-1), sv.n, sv.z, sv.ancilla)


def project_aux(sv: StateVector) -> tuple[StateVector, float]:
    """Post-select the auxiliary register on ``|0>``; returns the renormalized state and its probability."""
    t = sv.tensor()
    kept = np.zeros_like(t)
    kept[:, 0, :] = t[:, 0, :]
    prob = float(np.vdot(kept, kept).real)
    if prob <= 0.0:
        raise VanishingSuccessError("post-selection on |0>_aux has zero probability")
    return StateVector(kept.reshape(-1) / math.sqrt(prob), sv.n, sv.z, sv.ancilla), prob


def apply_hadamard_ancilla(sv: StateVector) -> StateVector:
    t = sv.tensor()
    return StateVector(np.tensordot(_H, t, axes=(1, 0)).reshape(-1), sv.n, sv.z, sv.ancilla)


def _householder_apply(psi: np.ndarray, vec: np.ndarray, adjoint: bool = False) -> np.ndarray:
    """Apply the unitary ``U`` with ``U|0> = psi`` (a phase-corrected Householder reflector).

    ``U = e^{i phi} (I - 2 w w^dagger)`` with ``w`` proportional to ``|0> - e^{-i phi} psi``.
    """
    phase = psi[0] / abs(psi[0]) if abs(psi[0]) > 1e-300 else 1.0
    w = -phase.conjugate() * psi
    w[0] += 1.0
    nw = np.linalg.norm(w)
    if nw < 1e-14:
        return vec * (phase.conjugate() if adjoint else phase)
    w = w / nw
    proj = np.einsum("s,...s->...", w.conj(), vec)
    refl = vec - 2.0 * proj[..., None] * w
    return refl * (phase.conjugate() if adjoint else phase)


def apply_state_prep(psi, sv: StateVector, controlled_on_ancilla: bool = False,
                     adjoint: bool = False) -> StateVector:
    """Apply ``U`` (or ``U^dagger``) with ``U|0>_state = psi`` on the state register."""
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    if psi.size != 1 << sv.n:
        raise ValueError("state size mismatch")
    psi = psi / np.linalg.norm(psi)
    t = sv.tensor().copy()
    if controlled_on_ancilla:
        t[0] = _householder_apply(psi, t[0], adjoint)
    else:
        t = _householder_apply(psi, t, adjoint)
    return StateVector(t.reshape(-1), sv.n, sv.z, sv.ancilla)


def reduced_ancilla(sv: StateVector) -> np.ndarray:
    """2x2 reduced density matrix of the ancilla."""
    if not sv.ancilla:
        raise ValueError("state has no ancilla")
    m = sv.tensor().reshape(2, -1)
    rho = m @ m.conj().T
    return rho / np.trace(rho).real


def ancilla_purity(sv: StateVector) -> float:
    rho = reduced_ancilla(sv)
    return float(np.trace(rho @ rho).real)


def sigma_z_ancilla(sv: StateVector) -> float:
    rho = reduced_ancilla(sv)
    return float((rho[0, 0] - rho[1, 1]).real)


@dataclass(frozen=True)
class HadamardResult:
    sigma_z: float
    p_succ: float
    purity: float
    aux_probability: float

    @property
    def overlap(self) -> float:
        """``Re <left| P_aux Q |right>`` recovered from the ancilla."""
        return self.sigma_z * self.aux_probability


def hadamard_test(left, c: CompiledOperator, right) -> HadamardResult:
    """Emulate the phase-kickback circuit for ``Re <left| P_aux Q |right>``.

    Ancilla in ``|+>``; controlled state preparation of ``right``, controlled
    ``Q``, post-selection of ``|0>_aux``, controlled inverse preparation of
    ``left``, Hadamard on the ancilla. ``P_succ = |P_aux Q |right>|^2`` and the
    post-selection probability equals ``(P_succ + 1) / 2``.
    """
    left = np.asarray(left, dtype=complex).reshape(-1)
    right = np.asarray(right, dtype=complex).reshape(-1)
    sv = StateVector.zero(c.n, c.z, ancilla=True)
    sv = apply_hadamard_ancilla(sv)
    sv = apply_state_prep(right, sv, controlled_on_ancilla=True)
    sv = apply_compiled(c, sv, controlled_on_ancilla=True)
    branch = sv.tensor()[0]  # (aux, state), norm^2 = 1/2
    p_succ = float(2.0 * np.vdot(branch[0], branch[0]).real)
    if p_succ <= 0.0:
        raise VanishingSuccessError("operator branch has zero success probability")
    sv, prob = project_aux(sv)
    sv = apply_state_prep(left, sv, controlled_on_ancilla=True, adjoint=True)
    sv = apply_hadamard_ancilla(sv)
    return HadamardResult(sigma_z_ancilla(sv), p_succ, ancilla_purity(sv), prob)


def projected_apply(c: CompiledOperator, psi) -> np.ndarray:
    """``P_aux Q |psi>`` restricted to the state register (unnormalized)."""
    sv = apply_compiled(c, StateVector.embed(psi, c.z))
    return sv.tensor()[0, 0].copy()


# -- wave-equation cost -------------------------------------------------------

@dataclass(frozen=True)
class WaveCostContext:
    """Everything the one-step cost needs besides the candidate.

    ``p_now``/``p_prev`` are normalized state vectors with norms ``lam_now``/
    ``lam_prev``; the right-hand side is
    ``lam_now q1 P Q1 p_now - lam_prev q2 P Q2 p_prev + source_weight |source>``.
    """

    c1: CompiledOperator
    c2: CompiledOperator
    p_now: np.ndarray
    p_prev: np.ndarray
    lam_now: float
    lam_prev: float
    source_weight: float
    source_index: int

    def source_vector(self) -> np.ndarray:
        v = np.zeros(1 << self.c1.n, dtype=complex)
        v[self.source_index] = 1.0
        return v

    def rhs(self) -> np.ndarray:
        out = self.source_weight * self.source_vector()
        if self.lam_now != 0:
            out = out + self.lam_now * self.c1.a_q * projected_apply(self.c1, self.p_now)
        if self.lam_prev != 0:
            out = out - self.lam_prev * self.c2.a_q * projected_apply(self.c2, self.p_prev)
        return out


def _term(left, c: CompiledOperator, right) -> tuple[float, HadamardResult | None]:
    if np.linalg.norm(right) == 0:
        return 0.0, None
    res = hadamard_test(left, c, right)
    return res.overlap, res


def evaluate_cost(theta0: float, candidate, ctx: WaveCostContext, constant: float | None = None) -> float:
    """``|theta0 |cand> - rhs|^2`` assembled from Hadamard-test overlaps.

    The cross terms come from emulated ancilla measurements; ``constant`` is
    ``|rhs|^2`` (computed exactly when omitted).
    """
    cand = np.asarray(candidate, dtype=complex).reshape(-1)
    nc = np.linalg.norm(cand)
    if constant is None:
        r = ctx.rhs()
        constant = float(np.vdot(r, r).real)
    if nc == 0 or theta0 == 0:
        return max(theta0 * theta0 * (nc > 0) + constant, 0.0) if nc > 0 else constant
    cand = cand / nc
    cross = ctx.source_weight * cand[ctx.source_index].conjugate().real
    if ctx.lam_now != 0:
        cross += ctx.lam_now * ctx.c1.a_q * _term(cand, ctx.c1, ctx.p_now)[0]
    if ctx.lam_prev != 0:
        cross -= ctx.lam_prev * ctx.c2.a_q * _term(cand, ctx.c2, ctx.p_prev)[0]
    return max(theta0 * theta0 - 2.0 * theta0 * cross + constant, 0.0)


@dataclass(frozen=True)
class VqaStepRecord:
    t: float
    theta0: float
    state: np.ndarray = field(repr=False)
    p_succ_1: float
    p_succ_2: float
    purity_1: float
    purity_2: float
    cost: float


def tpvqa_wave_step(ctx: WaveCostContext, t_next: float, diagnostics: bool = True) -> VqaStepRecord:
    """Idealized optimizer: the new state is ``rhs / |rhs|`` with ``theta0 = |rhs|``.

    The right-hand side is built from the post-selected compiled operators, so
    their translation error enters exactly as it would on hardware. With
    ``diagnostics`` the two Hadamard tests at the optimum are emulated to
    report success probabilities and ancilla purities.
    """
    r = ctx.rhs()
    theta0 = float(np.linalg.norm(r))
    if theta0 == 0:
        raise VanishingSuccessError("right-hand side vanished")
    state = r / theta0
    p1 = p2 = float("nan")
    pur1 = pur2 = float("nan")
    cost = 0.0
    if diagnostics:
        if ctx.lam_now != 0:
            res = hadamard_test(state, ctx.c1, ctx.p_now)
            p1, pur1 = res.p_succ, res.purity
        if ctx.lam_prev != 0:
            res = hadamard_test(state, ctx.c2, ctx.p_prev)
            p2, pur2 = res.p_succ, res.purity
        cost = evaluate_cost(theta0, state, ctx, constant=theta0 * theta0)
    return VqaStepRecord(t_next, theta0, state, p1, p2, pur1, pur2, cost)


@dataclass
class TpvqaRun:
    records: list
    fields: list  # (step, t, real field of shape (2**n_y, 2**n_x))


def run_tpvqa(phys, src, c1: CompiledOperator, c2: CompiledOperator, steps: int,
              diagnostics_every: int = 20, snapshot_every: int = 20, callback=None) -> TpvqaRun:
    """Time-march the wave iteration with :func:`tpvqa_wave_step`.

    ``records`` holds the step records that carried diagnostics; ``fields``
    holds the unnormalized solution ``theta0 * state`` every ``snapshot_every``
    steps.
    """
    if c1.n != phys.n or c2.n != phys.n:
        raise ValueError("compiled operators do not match the grid size")
    if src.convention != "step":
        raise ValueError("only the per-step source convention is supported")
    ix, iy = src.index(phys)
    idx = (iy << phys.n_x) | ix
    shape = (1 << phys.n_y, 1 << phys.n_x)
    p_now = np.zeros(1 << phys.n, dtype=complex)
    p_prev = p_now.copy()
    lam_now = lam_prev = 0.0
    records, fields = [], []
    for k in range(steps):
        t = k * phys.dt
        ctx = WaveCostContext(c1, c2, p_now, p_prev, lam_now, lam_prev,
                              phys.dt**2 * src.weight(t, phys), idx)
        diag = bool(diagnostics_every) and (k + 1) % diagnostics_every == 0
        rec = tpvqa_wave_step(ctx, t + phys.dt, diagnostics=diag)
        p_prev, lam_prev = p_now, lam_now
        p_now, lam_now = rec.state, rec.theta0
        if diag:
            records.append(rec)
        if snapshot_every and (k + 1) % snapshot_every == 0:
            fields.append((k + 1, rec.t, (lam_now * p_now).real.reshape(shape)))
        if callback is not None:
            callback(k + 1, rec)
    return TpvqaRun(records, fields)
