"""Conditioned quantum trajectories and detection records.

`step` is the single-step reference operation: it draws one uniform random
number, compares it against the cumulative ladder of detector click
probabilities dp_k = eta_k Tr[C_k rho C_k^dag] dt, and either applies the
recorded detector's jump map or the renormalized no-click update (which
includes the deterministic sandwich terms for unmonitored decay and missed
detections).  `sample_trajectory` and `ensemble_average` run the same
dynamics through the batched engine in `_engine`.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import _engine
from ._engine import StepSizeError, run_batch, trajectory_rngs
from .models import ModelSpec
from .qcore import DensityMatrix, Operator

__all__ = [
    "DetectionRecord", "TrajectoryResult", "StepSizeError",
    "step", "sample_trajectory", "ensemble_average", "trajectory_rngs",
]

DEFAULT_DT = 1e-3


@dataclass(frozen=True)
class DetectionRecord:
    """Per-step click/no-click sequence over [0, T] for a set of detectors.

    events[i] is the detector index that clicked during step i, or -1 for
    no click; at most one click per step.
    """

    dt: float
    duration: float
    detector_ids: tuple[str, ...]
    events: np.ndarray

    def __post_init__(self):
        ev = np.asarray(self.events, dtype=np.int8)
        object.__setattr__(self, "events", ev)
        if ev.shape != (self.n_steps,):
            raise ValueError(f"expected {self.n_steps} steps, got {ev.shape}")
        if ev.max(initial=-1) >= len(self.detector_ids):
            raise ValueError("event refers to an unknown detector index")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def counts(self) -> dict[str, int]:
        return {det: int(np.sum(self.events == k)) for k, det in enumerate(self.detector_ids)}

    def total_count(self) -> int:
        return int(np.sum(self.events >= 0))

    def click_times(self) -> np.ndarray:
        return (np.nonzero(self.events >= 0)[0] + 1) * self.dt

    # -- serialization: columns step_index, detector_id; -1 marks no click.
    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# dt={self.dt!r} duration={self.duration!r}"
                  f" detectors={','.join(self.detector_ids)}\n")
        buf.write("step_index,detector_id\n")
        for i, e in enumerate(self.events):
            buf.write(f"{i},{int(e)}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DetectionRecord":
        lines = text.strip().splitlines()
        header = lines[0]
        if not header.startswith("#"):
            raise ValueError("missing record header line")
        meta = dict(part.split("=", 1) for part in header[1:].split())
        dt = float(meta["dt"])
        duration = float(meta["duration"])
        detectors = tuple(meta["detectors"].split(","))
        rows = [ln.split(",") for ln in lines[2:]]
        events = np.full(len(rows), -1, dtype=np.int8)
        for step_s, det_s in rows:
            events[int(step_s)] = int(det_s)
        return cls(dt, duration, detectors, events)


@dataclass(frozen=True)
class TrajectoryResult:
    record: DetectionRecord
    final_state: DensityMatrix
    times: np.ndarray | None = None
    observables: np.ndarray | None = None  # (n_times, n_obs)
    log_likelihood: np.ndarray | None = None  # (n_times,) record log-likelihood


def _check_dp_bound(dp_total: float) -> None:
    if dp_total >= 0.1:
        raise StepSizeError(
            f"total click probability {dp_total:.3f} >= 0.1; reduce dt")


def step(rho: DensityMatrix, model: ModelSpec, dt: float,
         rng: np.random.Generator) -> tuple[DensityMatrix, str | None]:
    """One stochastic update of the conditioned state; returns (state, event).

    Direct single-state reference implementation of the jump / no-jump
    rule; the batched engine is checked against it in the tests.  Consumes
    exactly one uniform random number.
    """
    m = rho.entries
    h = model.hamiltonian.entries
    mon = [(j.operator.entries, j.efficiency) for j in model.monitored_jumps]
    unmon = [c.entries for c in model.unmonitored_jumps]

    dps = np.array([eta * np.real(np.trace(c @ m @ c.conj().T)) * dt for c, eta in mon])
    dps = np.maximum(dps, 0.0)
    _check_dp_bound(float(dps.sum()))

    u = rng.random()
    cum = np.cumsum(dps)
    hit = np.nonzero(u < cum)[0]
    if hit.size:
        k = int(hit[0])
        c = mon[k][0]
        out = c @ m @ c.conj().T
        out = out / np.real(np.trace(out))
        return DensityMatrix(rho.space, out), model.monitored_jumps[k].detector_id

    h_eff = h - 0.5j * sum((c.conj().T @ c for c, _ in mon), np.zeros_like(h)) \
              - 0.5j * sum((c.conj().T @ c for c in unmon), np.zeros_like(h))
    prop = np.eye(len(m)) - 1j * dt * h_eff
    out = prop @ m @ prop.conj().T
    for c, eta in mon:
        if eta < 1.0:
            out = out + (1.0 - eta) * dt * (c @ m @ c.conj().T)
    for c in unmon:
        out = out + dt * (c @ m @ c.conj().T)
    out = out / np.real(np.trace(out))
    return DensityMatrix(rho.space, out), None


def sample_trajectory(model: ModelSpec,
                      rho0: DensityMatrix | np.ndarray,
                      T: float,
                      dt: float = DEFAULT_DT,
                      seed: int = 0,
                      observables: tuple[Operator, ...] = (),
                      integrator: str = "euler",
                      sample_every: int = 1,
                      validate: bool = True) -> TrajectoryResult:
    """Sample one detection record and conditioned evolution, seeded.

    A pure function of (model, rho0, seed): the same inputs reproduce the
    record bit for bit.  `rho0` may be a DensityMatrix or a bare state
    vector; scheduled pulses fire at their configured times.
    """
    state0 = _initial_array(rho0)
    rngs = trajectory_rngs(seed, 0, 1)
    res = run_batch(model, state0, T, dt, rngs=rngs, integrator=integrator,
                    sample_every=sample_every,
                    observables=tuple(o.entries for o in observables))
    record = DetectionRecord(dt, T, model.detector_ids, res.events[0])
    final = _final_density(model, res, 0)
    if validate:
        final.validate()
    return TrajectoryResult(record=record, final_state=final, times=res.times,
                            observables=res.observables[0] if res.observables is not None else None,
                            log_likelihood=res.loglik[0])


def ensemble_average(model: ModelSpec,
                     rho0: DensityMatrix | np.ndarray,
                     T: float,
                     dt: float,
                     N: int,
                     seed: int = 0,
                     sample_every: int = 1,
                     integrator: str = "euler") -> tuple[np.ndarray, list[DensityMatrix]]:
    """Average of N conditioned states on the sampling grid."""
    if N < 1:
        raise ValueError("N must be at least 1")
    state0 = _initial_array(rho0)
    rngs = trajectory_rngs(seed, 0, N)
    res = run_batch(model, state0, T, dt, rngs=rngs, integrator=integrator,
                    sample_every=sample_every, collect_mean=True, store_events=False)
    states = [DensityMatrix(model.space, m) for m in res.mean_states]
    return res.times, states


def _initial_array(rho0) -> np.ndarray:
    if isinstance(rho0, DensityMatrix):
        return rho0.entries
    return np.asarray(rho0, dtype=complex)


def _final_density(model: ModelSpec, res: _engine.EngineResult, i: int) -> DensityMatrix:
    if res.final_pure:
        v = res.final_states[i]
        return DensityMatrix(model.space, np.outer(v, v.conj()))
    return DensityMatrix(model.space, res.final_states[i])
