"""Heralded entanglement of two remote qubits by interference of their
readout fluorescence.

Both qubits start in (|0> + |1>)/sqrt(2) with their readout ions in
|down>; a pi pulse moves the |0> components to |e>, gating each readout
ion's fluorescence on its own qubit.  The two emission channels interfere
on a balanced beamsplitter, so the detectors project onto the symmetric
and antisymmetric jump operators chi_pm, erasing which-path information.
After the Rabi drives are turned off the readout ions relax and factor
out, and a final pi pulse returns the |e> components to |0>; the
surviving two-qubit state is one of |0,0>, |1,1> or the two maximally
entangled superpositions of |0,1> and |1,0>, identified by the record.

During the drive the Bell-state populations are tracked with |0>
identified with |e| (the final pulse simply renames the level), with the
readout ions pinned to |down,down>, so the four populations sum to one
exactly when the readouts have relaxed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._engine import run_batch, trajectory_rngs
from .models import (
    DOUBLE_SPACE,
    LVL_0, LVL_1, LVL_E, LVL_DOWN,
    ModelSpec,
    build_two_cavity_model,
    pi_pulse_unitary,
)
from .qcore import DensityMatrix, HilbertSpace, Operator, basis_ket, partial_trace
from .trajectory import DetectionRecord

BELL_LABELS = ("psi1", "psi2", "psi3", "psi4")


def _two_qubit_vector(qa: int, qb: int) -> np.ndarray:
    return basis_ket(DOUBLE_SPACE, {"qubit_A": qa, "readout_A": LVL_DOWN,
                                    "qubit_B": qb, "readout_B": LVL_DOWN})


def bell_vectors(excited_identification: bool = False) -> tuple[np.ndarray, ...]:
    """State vectors of psi_1..psi_4 with readout ions in |down, down>.

    With excited_identification the |0> components are replaced by |e>,
    matching the qubit encoding during the protocol (before the final
    restoring pulse).
    """
    zero = LVL_E if excited_identification else LVL_0
    v1 = _two_qubit_vector(zero, zero)
    v2 = _two_qubit_vector(LVL_1, LVL_1)
    v3 = (_two_qubit_vector(zero, LVL_1) + _two_qubit_vector(LVL_1, zero)) / np.sqrt(2)
    v4 = (_two_qubit_vector(zero, LVL_1) - _two_qubit_vector(LVL_1, zero)) / np.sqrt(2)
    return v1, v2, v3, v4


@dataclass(frozen=True)
class BellBasis:
    """The four Bell-sector projectors on the two-qubit subspace."""

    projectors: tuple[Operator, ...]

    @classmethod
    def build(cls, excited_identification: bool = False) -> "BellBasis":
        vecs = bell_vectors(excited_identification)
        return cls(tuple(Operator(DOUBLE_SPACE, np.outer(v, v.conj())) for v in vecs))


@dataclass(frozen=True)
class EntangleConfig:
    mu: float = 5.0
    omega_rd: float = 2.0
    gamma: float = 1.0
    detector_efficiency: float = 1.0
    T: float = 25.0
    drive_off: float | None = None     # default: T - relax_window
    relax_window: float = 5.0
    dt: float = 1e-3
    integrator: str = "euler"

    def resolved_drive_off(self) -> float:
        if self.drive_off is not None:
            return self.drive_off
        return max(self.T - self.relax_window, 0.0)

    def model(self) -> ModelSpec:
        return build_two_cavity_model(self.mu, self.omega_rd, self.gamma,
                                      eta=self.detector_efficiency,
                                      drive_off_time=self.resolved_drive_off())


@dataclass(frozen=True)
class HeraldOutcome:
    record: DetectionRecord | None
    populations: tuple[float, float, float, float]
    heralded_label: str
    fidelity: float
    purity: float
    n_plus_clicks: int
    n_minus_clicks: int
    max_p4_before_first_minus: float

    @property
    def p4_was_dark(self) -> bool:
        return self.max_p4_before_first_minus <= 1e-6


def initial_superposition() -> np.ndarray:
    """((|0> + |1>)/sqrt 2)^(x2) with both readout ions in |down>."""
    psi = np.zeros(DOUBLE_SPACE.total_dim, dtype=complex)
    for qa in (LVL_0, LVL_1):
        for qb in (LVL_0, LVL_1):
            psi += 0.5 * _two_qubit_vector(qa, qb)
    return psi


def herald_decision(outcome: HeraldOutcome, f_star: float) -> bool:
    """Accept the run iff its record-conditioned fidelity reaches f_star.

    The fidelity is a functional of the conditioned (filter) state, which
    the experimenter can compute from the record alone, so acceptance
    never peeks at information outside the measurement data.
    """
    if f_star < 0.0:
        raise ValueError("threshold must be non-negative")
    return outcome.fidelity >= f_star


def parity_label(outcome: HeraldOutcome) -> str:
    """Entangled-sector label from the parity of minus-port detections.

    Starting from an exchange-symmetric state, every chi_minus click flips
    the relative sign between the |0,1> and |1,0> components, so an even
    (odd) number of minus clicks heralds psi3 (psi4).  Validated against
    the conditioned state in the tests, not trusted blindly.
    """
    return "psi4" if outcome.n_minus_clicks % 2 else "psi3"


@dataclass
class EnsembleTraces:
    times: np.ndarray
    populations: np.ndarray  # (n_runs, n_times, 4) in the excited identification


def run_protocol_ensemble(config: EntangleConfig,
                          N: int,
                          seed: int = 0,
                          start: int = 0,
                          store_records: bool = False,
                          trace_count: int = 0,
                          trace_sample_every: int = 25) -> tuple[list[HeraldOutcome], EnsembleTraces | None]:
    """Run N independent protocol realizations; optionally keep population traces.

    Realizations carry global indices start..start+N-1, so a campaign can
    be split across workers without changing any trajectory's stream.
    Population traces (for the population-fan figure) are collected for
    runs with index below `trace_count`, on a thinned grid.
    """
    model = config.model()
    psi0 = initial_superposition()
    tilde_vecs = bell_vectors(excited_identification=True)
    obs = tuple(np.outer(v, v.conj()) for v in tilde_vecs) if trace_count > 0 else ()
    guard = ((tilde_vecs[3], "-"),)

    outcomes: list[HeraldOutcome] = []
    traces = None
    done = 0
    chunk_size = 512
    trace_rows = []
    trace_times = None
    while done < N:
        b = min(chunk_size, N - done)
        want_obs = obs if start + done < trace_count else ()
        res = run_batch(model, psi0, config.T, config.dt,
                        rngs=trajectory_rngs(seed, start + done, b),
                        integrator=config.integrator,
                        sample_every=trace_sample_every,
                        observables=want_obs,
                        store_events=store_records,
                        max_before=guard)
        outcomes.extend(_collect_outcomes(config, model, res, b))
        if want_obs:
            keep = min(b, trace_count - start - done)
            trace_rows.append(res.observables[:keep])
            trace_times = res.times
        done += b
    if trace_rows:
        traces = EnsembleTraces(times=trace_times, populations=np.concatenate(trace_rows, axis=0))
    return outcomes, traces


def run_protocol(config: EntangleConfig, seed: int = 0,
                 store_record: bool = True) -> HeraldOutcome:
    """Single realization of the heralding protocol."""
    outcomes, _ = run_protocol_ensemble(config, 1, seed, store_records=store_record)
    return outcomes[0]


def _collect_outcomes(config, model, res, b) -> list[HeraldOutcome]:
    u_final = (pi_pulse_unitary(DOUBLE_SPACE, "qubit_A")
               @ pi_pulse_unitary(DOUBLE_SPACE, "qubit_B")).entries
    bell = bell_vectors(excited_identification=False)
    minus_idx = model.detector_ids.index("-")
    plus_idx = model.detector_ids.index("+")
    out = []
    for i in range(b):
        if res.final_pure:
            v = u_final @ res.final_states[i]
            rho = DensityMatrix(DOUBLE_SPACE, np.outer(v, v.conj()))
            pops = tuple(float(abs(np.vdot(w, v)) ** 2) for w in bell)
        else:
            m = u_final @ res.final_states[i] @ u_final.conj().T
            rho = DensityMatrix(DOUBLE_SPACE, m)
            pops = tuple(float(np.real(np.vdot(w, m @ w))) for w in bell)
        reduced = partial_trace(rho, keep=("qubit_A", "qubit_B"))
        record = None
        if res.events is not None:
            record = DetectionRecord(config.dt, config.T, model.detector_ids, res.events[i])
        fidelity = max(pops[2], pops[3])
        out.append(HeraldOutcome(
            record=record,
            populations=pops,
            heralded_label=BELL_LABELS[int(np.argmax(pops))],
            fidelity=fidelity,
            purity=reduced.purity(),
            n_plus_clicks=int(res.n_clicks[i, plus_idx]),
            n_minus_clicks=int(res.n_clicks[i, minus_idx]),
            max_p4_before_first_minus=float(res.max_before[i, 0]),
        ))
    return out


@dataclass(frozen=True)
class SweepCell:
    eta: float
    T: float
    fidelities: np.ndarray
    heralded_labels: tuple[str, ...]

    def fraction_at_least(self, f: float) -> float:
        return float(np.mean(self.fidelities >= f))


def fidelity_sweep(etas: tuple[float, ...],
                   Ts: tuple[float, ...],
                   N: int,
                   seed: int = 0,
                   base: EntangleConfig = EntangleConfig(),
                   f_grid: np.ndarray | None = None) -> tuple[list[SweepCell], np.ndarray]:
    """Fidelity statistics over a grid of detector efficiencies and durations.

    Returns one cell per (eta, T) with the per-run heralded fidelities, and
    the threshold grid used for cumulative fractions.
    """
    if f_grid is None:
        f_grid = np.round(np.linspace(0.5, 1.0, 51), 3)
    cells = []
    for ci, eta in enumerate(etas):
        for cj, T in enumerate(Ts):
            cfg = EntangleConfig(mu=base.mu, omega_rd=base.omega_rd, gamma=base.gamma,
                                 detector_efficiency=eta, T=T,
                                 relax_window=base.relax_window, dt=base.dt,
                                 integrator=base.integrator)
            outcomes, _ = run_protocol_ensemble(cfg, N, seed=seed + 7919 * (ci * len(Ts) + cj))
            cells.append(SweepCell(eta=eta, T=T,
                                   fidelities=np.array([o.fidelity for o in outcomes]),
                                   heralded_labels=tuple(o.heralded_label for o in outcomes)))
    return cells, f_grid
