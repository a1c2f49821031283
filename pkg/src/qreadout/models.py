"""Hamiltonians, jump operators, pulse schedules and detector layouts.

Four experiment variants are covered:

* direct drive of the readout ion (resonance fluorescence gated by the
  dipole blockade),
* the same with excited-state decay of the qubit ion and optional
  re-excitation pulses or a continuous qubit drive,
* cavity-reflection monitoring, where the detected field is the jump
  operator displaced by the coherent drive amplitude beta,
* the two-cavity beamsplitter arrangement used for heralded entanglement.

Level conventions: the qubit ion has levels 0 = |0>, 1 = |1>, 2 = |e>;
the readout ion has 0 = |down>, 1 = |up>.  All rates are in units of the
readout ion's Purcell rate (gamma = 1 is the conventional choice).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import constants

from .qcore import (
    HilbertSpace,
    Operator,
    subsystem_operator,
    transition,
    projector_matrix,
)

QUBIT_DIM = 3
READOUT_DIM = 2
LVL_0, LVL_1, LVL_E = 0, 1, 2
LVL_DOWN, LVL_UP = 0, 1

#: single-cavity layout |qubit> (x) |readout|
SINGLE_SPACE = HilbertSpace((("qubit", QUBIT_DIM), ("readout", READOUT_DIM)))

#: two-cavity layout (qubit_A (x) readout_A) (x) (qubit_B (x) readout_B)
DOUBLE_SPACE = HilbertSpace((
    ("qubit_A", QUBIT_DIM), ("readout_A", READOUT_DIM),
    ("qubit_B", QUBIT_DIM), ("readout_B", READOUT_DIM),
))


@dataclass(frozen=True)
class PulseEvent:
    """Scheduled instantaneous action: a unitary, or a drive amplitude change."""

    time: float
    unitary: Operator | None = None
    drive: tuple[str, float] | None = None

    def __post_init__(self):
        if (self.unitary is None) == (self.drive is None):
            raise ValueError("PulseEvent needs exactly one of unitary / drive")
        if self.unitary is not None and not self.unitary.is_unitary(1e-10):
            raise ValueError("pulse operator is not unitary to 1e-10")


@dataclass(frozen=True)
class MonitoredJump:
    operator: Operator
    detector_id: str
    efficiency: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"detector_efficiency outside [0,1]: {self.efficiency}")


@dataclass(frozen=True)
class ModelSpec:
    """Full experiment definition consumed by the trajectory engine.

    The Hamiltonian is split into a static part and named drive terms so
    that schedule events can change drive amplitudes mid-run; the
    `hamiltonian` property gives the full operator at the initial
    amplitudes.
    """

    space: HilbertSpace
    h_static: Operator
    drives: tuple[tuple[str, Operator, float], ...] = ()  # (name, term, amplitude)
    monitored_jumps: tuple[MonitoredJump, ...] = ()
    unmonitored_jumps: tuple[Operator, ...] = ()
    schedule: tuple[PulseEvent, ...] = ()
    # optional equivalent decomposition {B_j} with
    # sum_j B_j rho B_j^dag = sum_k (1-eta_k) C_k rho C_k^dag, used by the
    # engine when the raw jump operators are denser than necessary (the
    # beamsplitter pair chi_pm reduces to the local operators C_A, C_B)
    missed_detection_basis: tuple[Operator, ...] | None = None

    def __post_init__(self):
        for op in [self.h_static] + [t for _, t, _ in self.drives] \
                + [j.operator for j in self.monitored_jumps] + list(self.unmonitored_jumps) \
                + list(self.missed_detection_basis or ()):
            if op.space != self.space:
                raise ValueError("all model operators must share the model space")
        times = [ev.time for ev in self.schedule]
        if any(t2 < t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("schedule times must be non-decreasing")

    @property
    def hamiltonian(self) -> Operator:
        h = self.h_static.entries.copy()
        for _, term, amp in self.drives:
            h += amp * term.entries
        return Operator(self.space, h)

    @property
    def detector_ids(self) -> tuple[str, ...]:
        return tuple(j.detector_id for j in self.monitored_jumps)

    def drive_amplitude(self, name: str) -> float:
        for n, _, amp in self.drives:
            if n == name:
                return amp
        raise KeyError(name)


@dataclass(frozen=True)
class DipoleGeometry:
    """Geometry entering the static dipole-dipole coupling strength.

    mu_q, mu_r are the magnitudes (C m) of the difference in permanent
    dipole moment between excited and ground state of qubit and readout
    ion; unit vectors give their orientations and the inter-ion axis;
    separation in meters; epsilon is the relative permittivity at zero
    frequency (local-field correction).
    """

    mu_q: float
    mu_r: float
    n_q: tuple[float, float, float]
    n_r: tuple[float, float, float]
    n_sep: tuple[float, float, float]
    separation: float
    epsilon: float

    def __post_init__(self):
        for name, v in [("n_q", self.n_q), ("n_r", self.n_r), ("n_sep", self.n_sep)]:
            if abs(np.linalg.norm(v) - 1.0) > 1e-12:
                raise ValueError(f"{name} is not a unit vector")
        if self.separation <= 0:
            raise ValueError("ion separation must be positive")
        if self.epsilon <= 0:
            raise ValueError("relative permittivity must be positive")


def dipole_strength(geom: DipoleGeometry) -> float:
    """Dipole-dipole shift of the readout ion, as an angular frequency (rad/s).

    Includes the local-field correction ((eps+2)/(3 eps))^2 and the usual
    orientation bracket; the energy is divided by hbar.
    """
    nq = np.asarray(geom.n_q)
    nr = np.asarray(geom.n_r)
    nm = np.asarray(geom.n_sep)
    bracket = float(nr @ nq - 3.0 * (nr @ nm) * (nq @ nm))
    local = ((geom.epsilon + 2.0) / (3.0 * geom.epsilon)) ** 2
    energy = local * geom.mu_q * geom.mu_r / (4 * np.pi * constants.epsilon_0 * geom.separation ** 3)
    return energy * bracket / constants.hbar


def purcell_rate(g: float, kappa: float) -> float:
    """Purcell-enhanced decay rate 4 g^2 / kappa of an emitter in a bad cavity."""
    if kappa <= 0:
        raise ValueError("cavity decay rate must be positive")
    return 4.0 * g * g / kappa


# ---------------------------------------------------------------------------
# Single-cavity building blocks

def _check_rates(**rates) -> None:
    for name, val in rates.items():
        if val < 0:
            raise ValueError(f"negative rate or amplitude: {name} = {val}")


def pi_pulse_unitary(space: HilbertSpace = SINGLE_SPACE, qubit_label: str = "qubit") -> Operator:
    """Instantaneous pi pulse swapping |0> and |e>, identity elsewhere."""
    u = np.eye(QUBIT_DIM, dtype=complex)
    u[LVL_0, LVL_0] = u[LVL_E, LVL_E] = 0.0
    u[LVL_0, LVL_E] = u[LVL_E, LVL_0] = 1.0
    return subsystem_operator(space, qubit_label, u)


def _readout_flip_x(space: HilbertSpace, label: str) -> Operator:
    """(|down><up| + |up><down|)/2 on one readout ion (unit-amplitude drive term)."""
    sx = transition(READOUT_DIM, LVL_DOWN, LVL_UP) + transition(READOUT_DIM, LVL_UP, LVL_DOWN)
    return 0.5 * subsystem_operator(space, label, sx)


def _qubit_flip_x(space: HilbertSpace, label: str) -> Operator:
    """(|0><e| + |e><0|)/2 on one qubit ion."""
    sx = transition(QUBIT_DIM, LVL_0, LVL_E) + transition(QUBIT_DIM, LVL_E, LVL_0)
    return 0.5 * subsystem_operator(space, label, sx)


def _blockade_term(space: HilbertSpace, qubit_label: str, readout_label: str) -> Operator:
    pe = subsystem_operator(space, qubit_label, projector_matrix(QUBIT_DIM, LVL_E))
    pu = subsystem_operator(space, readout_label, projector_matrix(READOUT_DIM, LVL_UP))
    return pe @ pu


def lowering_operator(space: HilbertSpace, readout_label: str, gamma: float) -> Operator:
    """sqrt(gamma) |down><up| on the given readout ion, identity elsewhere."""
    sm = transition(READOUT_DIM, LVL_DOWN, LVL_UP)
    return np.sqrt(gamma) * subsystem_operator(space, readout_label, sm)


def build_direct_drive_model(mu: float,
                             omega_rd: float,
                             delta: float = 0.0,
                             gamma: float = 1.0,
                             Gamma: float = 0.0,
                             omega_q: float = 0.0,
                             pi_times: tuple[float, ...] = (0.0,)) -> ModelSpec:
    """Readout ion driven directly at Rabi frequency omega_rd.

    H = mu |e><e|(x)|up><up| - delta |up><up|
        + (omega_rd/2)(|down><up| + h.c.) + (omega_q/2)(|0><e| + h.c.)

    One monitored decay channel sqrt(gamma)|down><up| at unit detector
    efficiency; if Gamma > 0, unmonitored decay sqrt(Gamma)|n><e| to both
    qubit ground states n = 0, 1.  pi_times schedules instantaneous
    |0><->|e> swaps (the state-preparation pulse by default).
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    _check_rates(mu=mu, omega_rd=omega_rd, gamma=gamma, Gamma=Gamma, omega_q=omega_q)
    sp = SINGLE_SPACE
    p_up = subsystem_operator(sp, "readout", projector_matrix(READOUT_DIM, LVL_UP))
    h_static = mu * _blockade_term(sp, "qubit", "readout") - delta * p_up
    drives = (("readout", _readout_flip_x(sp, "readout"), omega_rd),
              ("qubit", _qubit_flip_x(sp, "qubit"), omega_q))
    monitored = (MonitoredJump(lowering_operator(sp, "readout", gamma), "D", 1.0),)
    unmonitored = ()
    if Gamma > 0:
        unmonitored = tuple(
            np.sqrt(Gamma) * subsystem_operator(sp, "qubit", transition(QUBIT_DIM, n, LVL_E))
            for n in (LVL_0, LVL_1))
    u_pi = pi_pulse_unitary(sp)
    schedule = tuple(PulseEvent(t, unitary=u_pi) for t in sorted(pi_times))
    return ModelSpec(sp, h_static, drives, monitored, unmonitored, schedule)


def build_reflection_model(mu: float,
                           beta: float,
                           gamma: float = 1.0,
                           delta: float = 0.0,
                           omega_q: float = 0.0,
                           pi_times: tuple[float, ...] = (0.0,)) -> ModelSpec:
    """Readout ion driven through the cavity; detector sees the reflected field.

    The monitored jump operator is the displaced output field C_r + beta
    (beta real, added on the diagonal).  In this displaced picture the
    cavity drive appears on the readout ion as (i beta / 2)(C_r - C_r^dag),
    a Rabi frequency of magnitude omega_rd = beta sqrt(gamma) rotated 90
    degrees from the displacement quadrature.  That phase is forced by
    photon-flux conservation: a lossless mirror reflects every incident
    photon on average, so the steady detected flux is exactly |beta|^2
    regardless of the dipole shift and only temporal correlations carry
    qubit information.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    _check_rates(mu=mu, beta=beta, gamma=gamma, omega_q=omega_q)
    sp = SINGLE_SPACE
    p_up = subsystem_operator(sp, "readout", projector_matrix(READOUT_DIM, LVL_UP))
    h_static = mu * _blockade_term(sp, "qubit", "readout") - delta * p_up

    c_r = lowering_operator(sp, "readout", gamma)
    drive_term = 0.5j * (c_r - c_r.dagger())
    drives = (("readout", drive_term, beta),
              ("qubit", _qubit_flip_x(sp, "qubit"), omega_q))

    c_out = c_r + beta * Operator(sp, np.eye(sp.total_dim))
    monitored = (MonitoredJump(c_out, "D", 1.0),)
    u_pi = pi_pulse_unitary(sp)
    schedule = tuple(PulseEvent(t, unitary=u_pi) for t in sorted(pi_times))
    return ModelSpec(sp, h_static, drives, monitored, (), schedule)


def build_two_cavity_model(mu: float,
                           omega_rd: float,
                           gamma: float = 1.0,
                           eta: float = 1.0,
                           drive_off_time: float | None = 20.0,
                           pi_time: float = 0.0) -> ModelSpec:
    """Two identical cavities whose outputs interfere on a 50:50 beamsplitter.

    The two detectors monitor chi_pm = (C_A +- C_B)/sqrt(2) at efficiency
    eta each.  The schedule applies the preparation pi pulses on both
    qubits at pi_time and turns the readout Rabi drives off at
    drive_off_time (pass None to keep them on).
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"detector_efficiency outside [0,1]: {eta}")
    _check_rates(mu=mu, omega_rd=omega_rd, gamma=gamma)
    sp = DOUBLE_SPACE
    h_static = (mu * _blockade_term(sp, "qubit_A", "readout_A")
                + mu * _blockade_term(sp, "qubit_B", "readout_B"))
    drive_term = _readout_flip_x(sp, "readout_A") + _readout_flip_x(sp, "readout_B")
    drives = (("readout", drive_term, omega_rd),)

    c_a = lowering_operator(sp, "readout_A", gamma)
    c_b = lowering_operator(sp, "readout_B", gamma)
    chi_plus = (1.0 / np.sqrt(2.0)) * (c_a + c_b)
    chi_minus = (1.0 / np.sqrt(2.0)) * (c_a - c_b)
    monitored = (MonitoredJump(chi_plus, "+", eta), MonitoredJump(chi_minus, "-", eta))

    u_pi = pi_pulse_unitary(sp, "qubit_A") @ pi_pulse_unitary(sp, "qubit_B")
    events = [PulseEvent(pi_time, unitary=u_pi)]
    if drive_off_time is not None:
        events.append(PulseEvent(drive_off_time, drive=("readout", 0.0)))
    missed = None
    if eta < 1.0:
        scale = np.sqrt(1.0 - eta)
        missed = (scale * c_a, scale * c_b)
    return ModelSpec(sp, h_static, drives, monitored, (),
                     tuple(sorted(events, key=lambda e: e.time)),
                     missed_detection_basis=missed)


def swap_ab_operator(space: HilbertSpace = DOUBLE_SPACE) -> Operator:
    """Permutation exchanging the A and B nodes of the two-cavity space."""
    dims = [d for _, d in space.subsystems]
    assert len(dims) == 4 and dims[0] == dims[2] and dims[1] == dims[3]
    d = space.total_dim
    u = np.zeros((d, d))
    for qa in range(dims[0]):
        for ra in range(dims[1]):
            for qb in range(dims[2]):
                for rb in range(dims[3]):
                    src = ((qa * dims[1] + ra) * dims[2] + qb) * dims[3] + rb
                    dst = ((qb * dims[1] + rb) * dims[2] + qa) * dims[3] + ra
                    u[dst, src] = 1.0
    return Operator(space, u)
