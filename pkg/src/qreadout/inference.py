"""Bayesian hypothesis filtering on detection records.

A hypothesis is an initial state of the joint system.  For a given record,
each hypothesis state is propagated through the same jump / no-jump maps
that generated the record, accumulating log dp at clicks and log(1 - dp)
over no-click steps; Bayes' rule then turns the accumulated
log-likelihoods into posterior probabilities.  Log-domain accumulation is
essential: a record holds tens of thousands of per-step factors, whose
product underflows any floating-point representation.

Also provided: the integrated-count baseline classifier, the analytic
no-click error probability in the strong-blockade limit, and a
deterministic Lindblad integrator used as the ensemble-average oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from ._engine import run_batch, trajectory_rngs
from .models import ModelSpec, SINGLE_SPACE, LVL_0, LVL_1, LVL_DOWN
from .qcore import DensityMatrix, basis_ket, ket_state
from .trajectory import DetectionRecord

#: classification result for an exact posterior tie
TIE = "tie"


@dataclass(frozen=True)
class Hypothesis:
    label: str
    rho0: DensityMatrix
    prior: float

    def __post_init__(self):
        if not 0.0 <= self.prior <= 1.0:
            raise ValueError("prior must lie in [0, 1]")


def standard_hypotheses(space=SINGLE_SPACE, priors=(0.5, 0.5)) -> tuple[Hypothesis, Hypothesis]:
    """The two readout hypotheses: qubit starts in |0> or |1>, readout in |down>."""
    h0 = Hypothesis("h0", ket_state(space, basis_ket(space, {"qubit": LVL_0, "readout": LVL_DOWN})), priors[0])
    h1 = Hypothesis("h1", ket_state(space, basis_ket(space, {"qubit": LVL_1, "readout": LVL_DOWN})), priors[1])
    return h0, h1


def _check_priors(hypotheses) -> None:
    s = sum(h.prior for h in hypotheses)
    if abs(s - 1.0) > 1e-9:
        raise ValueError(f"priors sum to {s}, expected 1")


@dataclass(frozen=True)
class PosteriorTrace:
    times: np.ndarray
    labels: tuple[str, ...]
    probabilities: np.ndarray       # (n_times, n_hyp)
    log_likelihoods: np.ndarray     # (n_times, n_hyp)


def _posteriors(loglik: np.ndarray, priors: np.ndarray) -> np.ndarray:
    """Normalized posteriors from log-likelihood columns, stable under -inf."""
    z = loglik + np.log(priors)[None, :]
    mx = np.max(z, axis=1, keepdims=True)
    degenerate = ~np.isfinite(mx[:, 0])
    mx = np.where(np.isfinite(mx), mx, 0.0)
    w = np.exp(z - mx)
    w[degenerate] = priors[None, :]  # record impossible under every hypothesis
    return w / w.sum(axis=1, keepdims=True)


def bayesian_filter(record: DetectionRecord,
                    model: ModelSpec,
                    hypotheses: tuple[Hypothesis, ...],
                    sample_every: int = 1,
                    integrator: str = "euler") -> PosteriorTrace:
    """Propagate every hypothesis through the record and apply Bayes' rule.

    A click a hypothesis assigns probability zero (dp_i = 0) sends that
    hypothesis's posterior to exactly zero from then on.
    """
    _check_priors(hypotheses)
    events = np.asarray(record.events, dtype=np.int8)[None, :]
    logliks = []
    times = None
    for h in hypotheses:
        res = run_batch(model, h.rho0.entries, record.duration, record.dt,
                        replay_events=events, sample_every=sample_every,
                        integrator=integrator, store_events=False)
        logliks.append(res.loglik[0])
        times = res.times
    loglik = np.stack(logliks, axis=1)
    priors = np.array([h.prior for h in hypotheses])
    return PosteriorTrace(times=times, labels=tuple(h.label for h in hypotheses),
                          probabilities=_posteriors(loglik, priors),
                          log_likelihoods=loglik)


def classify(trace: PosteriorTrace) -> str:
    """Label of the most probable hypothesis at the final time; TIE on an exact tie."""
    p = trace.probabilities[-1]
    top = np.max(p)
    winners = np.nonzero(p == top)[0]
    if len(winners) > 1:
        return TIE
    return trace.labels[int(winners[0])]


# ---------------------------------------------------------------------------
# Ensemble error probabilities

@dataclass(frozen=True)
class QeCurve:
    times: np.ndarray
    qe_bayes: np.ndarray
    qe_stderr: np.ndarray
    qe_counts: np.ndarray | None = None
    #: per-hypothesis total counts at the final time, for histogram reuse
    final_counts: tuple[np.ndarray, ...] = ()


def _laplace_rate(k: np.ndarray, n: int) -> np.ndarray:
    return (k + 1.0) / (n + 2.0)


QE_CHUNK = 512  # fixed sampling chunk so results never depend on worker layout


def qe_sample_chunk(model: ModelSpec,
                    hypotheses: tuple[Hypothesis, ...],
                    T: float,
                    dt: float,
                    seed: int,
                    arm: int,
                    start: int,
                    count: int,
                    sample_every: int = 25,
                    integrator: str = "euler",
                    include_counts: bool = True,
                    store_events: bool = False) -> dict:
    """Sample `count` records under hypothesis `arm` and filter under all.

    Returns per-grid classification scores and cumulative counts for this
    chunk of trajectory indices; the unit of work handed to pool workers.
    """
    truth = hypotheses[arm]
    rngs = trajectory_rngs(seed, start, count, arm=arm)
    sampled = run_batch(model, truth.rho0.entries, T, dt, rngs=rngs,
                        integrator=integrator, sample_every=sample_every)
    nh = len(hypotheses)
    loglik = np.zeros((count, len(sampled.times), nh))
    loglik[:, :, arm] = sampled.loglik
    for i, other in enumerate(hypotheses):
        if i == arm:
            continue
        rep = run_batch(model, other.rho0.entries, T, dt,
                        replay_events=sampled.events, sample_every=sample_every,
                        integrator=integrator, store_events=False)
        loglik[:, :, i] = rep.loglik

    priors = np.array([h.prior for h in hypotheses])
    z = loglik + np.log(priors)[None, None, :]
    best = np.max(z, axis=2)
    is_best = z == best[:, :, None]
    n_best = is_best.sum(axis=2)
    # an exact posterior tie contributes 1/n_best to each tied winner
    correct_score = np.where(is_best[:, :, arm], 1.0 / n_best, 0.0).sum(axis=0)

    out = {"times": sampled.times, "correct_score": correct_score}
    if include_counts:
        grid_steps = np.round(sampled.times / dt).astype(int)
        cum = np.concatenate([np.zeros((count, 1), dtype=np.int32),
                              np.cumsum(sampled.events >= 0, axis=1, dtype=np.int32)], axis=1)
        out["counts_grid"] = cum[:, grid_steps]
    if store_events:
        out["events"] = sampled.events
    return out


def estimate_qe(model: ModelSpec,
                hypotheses: tuple[Hypothesis, ...],
                T: float,
                dt: float,
                N: int,
                seed: int = 0,
                sample_every: int = 25,
                integrator: str = "euler",
                include_counts: bool = True,
                chunk_results: list[dict] | None = None) -> QeCurve:
    """Misassignment probability of the Bayesian filter vs probing time.

    Simulates N records under each hypothesis, filters every record under
    every hypothesis, and classifies by maximum posterior at each grid
    time.  Exact posterior ties count as half an error.  The standard
    error treats each arm as binomial with Laplace-stabilized rates, so
    error bars stay positive when no misassignment is observed.

    `chunk_results` lets a caller supply precomputed qe_sample_chunk
    outputs (one list entry per (arm, chunk), arms outermost), as the
    parallel experiment runner does.
    """
    if N < 100:
        raise ValueError("N must be at least 100")
    _check_priors(hypotheses)
    nh = len(hypotheses)
    priors = np.array([h.prior for h in hypotheses])

    if chunk_results is None:
        chunk_results = [
            qe_sample_chunk(model, hypotheses, T, dt, seed, arm, start,
                            min(QE_CHUNK, N - start), sample_every=sample_every,
                            integrator=integrator, include_counts=include_counts)
            for arm in range(nh)
            for start in range(0, N, QE_CHUNK)]

    per_arm = len(chunk_results) // nh
    times = chunk_results[0]["times"]
    G = len(times)
    wrong_rate = np.zeros((nh, G))
    counts_grid = []
    var_terms = []
    for j in range(nh):
        chunks = chunk_results[j * per_arm:(j + 1) * per_arm]
        score = np.sum([c["correct_score"] for c in chunks], axis=0)
        wrong_rate[j] = 1.0 - score / N
        f = _laplace_rate(wrong_rate[j] * N, N)
        var_terms.append(priors[j] ** 2 * f * (1.0 - f) / N)
        if include_counts:
            counts_grid.append(np.concatenate([c["counts_grid"] for c in chunks], axis=0))

    qe = priors @ wrong_rate
    stderr = np.sqrt(np.sum(var_terms, axis=0))

    qe_counts = None
    final_counts = ()
    if include_counts:
        qe_counts = np.array([
            count_error_from_samples([c[:, g] for c in counts_grid], priors)
            for g in range(G)])
        final_counts = tuple(c[:, -1] for c in counts_grid)
    return QeCurve(times=times, qe_bayes=qe, qe_stderr=stderr,
                   qe_counts=qe_counts, final_counts=final_counts)


def qe_analytic_large_mu(t, omega: float, gamma: float = 1.0, prior1: float = 0.5):
    """No-click error probability in the strong-blockade limit.

    Equals prior1 times the survival (no-click) probability of a resonantly
    driven two-level emitter started in its ground state,

        e^(-gamma t / 2) [4 w^2 - gamma^2 cos(wt~) + 2 gamma w~ sin(w~ t)] / (4 w~^2),

    with w~ = sqrt(w^2 - gamma^2/4).  Below the critical drive w < gamma/2
    the frequency w~ is imaginary and the trigonometric functions continue
    to hyperbolic ones; at w = gamma/2 the series limit applies.  Accepts
    scalar or array t.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    wt2 = omega ** 2 - gamma ** 2 / 4.0
    if abs(wt2) < (1e-6 * max(omega, gamma)) ** 2:
        # critical damping: bracket/(4 wt^2) -> 1 + gamma t / 2 + (gamma t)^2 / 8
        core = 1.0 + gamma * t / 2.0 + (gamma * t) ** 2 / 8.0
    else:
        wt = np.sqrt(complex(wt2))
        bracket = 4 * omega ** 2 - gamma ** 2 * np.cos(wt * t) + 2 * gamma * wt * np.sin(wt * t)
        core = np.real(bracket / (4.0 * wt2))
    out = prior1 * np.exp(-gamma * t / 2.0) * core
    return float(out) if out.ndim == 0 else out


def count_error_from_samples(counts_by_hyp: list[np.ndarray],
                             priors: np.ndarray | None = None) -> float:
    """Histogram-overlap error of a classifier using only the total count.

    Estimates sum over integer counts of min_j [P(N | h_j) P(h_j)], which
    for equal priors is (1/2) sum min[P(N|h0), P(N|h1)].  The naive
    empirical min is biased low by the expected magnitude of sampling
    noise wherever the two histograms nearly coincide, so the per-bin
    difference is variance-debiased before taking
    min(a, b) = (a + b - |a - b|)/2.  Two hypotheses only.
    """
    if len(counts_by_hyp) != 2:
        raise ValueError("count-overlap error is defined for two hypotheses")
    if priors is None:
        priors = np.array([0.5, 0.5])
    top = max(int(c.max(initial=0)) for c in counts_by_hyp) + 1
    edges = np.arange(0, top + 1)
    a_hat, b_hat = [
        p * np.histogram(c, bins=edges)[0] / len(c)
        for p, c in zip(priors, counts_by_hyp)]
    n0, n1 = (len(c) for c in counts_by_hyp)
    var = (priors[0] ** 2 * (a_hat / priors[0]) * (1 - a_hat / priors[0]) / n0
           + priors[1] ** 2 * (b_hat / priors[1]) * (1 - b_hat / priors[1]) / n1)
    diff = np.sqrt(np.maximum((a_hat - b_hat) ** 2 - var, 0.0))
    return float(np.sum(a_hat + b_hat - diff) / 2.0)


def integrated_count_error(model: ModelSpec,
                           hypotheses: tuple[Hypothesis, ...],
                           T: float,
                           dt: float,
                           N: int,
                           seed: int = 0,
                           integrator: str = "euler") -> float:
    """Classification error from the total count alone, sampled fresh."""
    _check_priors(hypotheses)
    counts = []
    for j, h in enumerate(hypotheses):
        rngs = trajectory_rngs(seed, 0, N, arm=j)
        res = run_batch(model, h.rho0.entries, T, dt, rngs=rngs,
                        integrator=integrator, sample_every=max(1, int(round(T / dt))),
                        store_events=False)
        counts.append(res.n_clicks.sum(axis=1))
    return count_error_from_samples(counts, np.array([h.prior for h in hypotheses]))


# ---------------------------------------------------------------------------
# Deterministic Lindblad oracle

def _liouvillian(h: np.ndarray, cs: list[np.ndarray]) -> np.ndarray:
    d = h.shape[0]
    eye = np.eye(d)
    L = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for c in cs:
        cc = c.conj().T @ c
        L += np.kron(c, c.conj()) - 0.5 * (np.kron(cc, eye) + np.kron(eye, cc.T))
    return L


def lindblad_oracle(model: ModelSpec,
                    rho0: DensityMatrix | np.ndarray,
                    T: float,
                    dt: float,
                    sample_every: int = 1,
                    rtol: float = 1e-9,
                    atol: float = 1e-11) -> tuple[np.ndarray, list[DensityMatrix]]:
    """Integrate the full Lindblad equation deterministically (ensemble oracle).

    All monitored jumps enter at full strength (detector efficiency is
    irrelevant on average) together with the unmonitored channels.  The
    integration is done with an adaptive ODE solver, independent of the
    stochastic engine's stepping, and honors the pulse schedule.
    """
    state = rho0.entries if isinstance(rho0, DensityMatrix) else np.asarray(rho0, dtype=complex)
    if state.ndim == 1:
        state = np.outer(state, state.conj())
    d = model.space.total_dim
    n_steps = int(round(T / dt))
    grid_steps = list(range(0, n_steps + 1, max(1, sample_every)))
    if grid_steps[-1] != n_steps:
        grid_steps.append(n_steps)
    grid_times = np.array(grid_steps) * dt

    cs = [j.operator.entries for j in model.monitored_jumps] + \
         [c.entries for c in model.unmonitored_jumps]
    amplitudes = {name: amp for name, _, amp in model.drives}
    events = sorted(model.schedule, key=lambda e: e.time)
    bounds = sorted({0.0, float(T)} | {float(ev.time) for ev in events if ev.time <= T})

    def hamiltonian():
        h = model.h_static.entries.copy()
        for name, term, _ in model.drives:
            h = h + amplitudes[name] * term.entries
        return h

    out: list[np.ndarray] = []
    gi = 0
    vec = state.reshape(-1)
    for bi, ta in enumerate(bounds):
        for ev in events:
            if abs(ev.time - ta) <= 1e-12:
                if ev.drive is not None:
                    amplitudes[ev.drive[0]] = ev.drive[1]
                else:
                    u = ev.unitary.entries
                    vec = (u @ vec.reshape(d, d) @ u.conj().T).reshape(-1)
        while gi < len(grid_times) and grid_times[gi] <= ta + 1e-12:
            out.append(vec.reshape(d, d).copy())
            gi += 1
        if bi + 1 == len(bounds):
            break
        tb = bounds[bi + 1]
        targets = [t for t in grid_times[gi:] if t < tb - 1e-12]
        L = _liouvillian(hamiltonian(), cs)
        sol = solve_ivp(lambda _t, y: L @ y, (ta, tb), vec,
                        t_eval=targets + [tb], rtol=rtol, atol=atol, method="DOP853")
        for col in sol.y[:, :len(targets)].T:
            out.append(col.reshape(d, d).copy())
            gi += 1
        vec = sol.y[:, -1]

    states = [DensityMatrix(model.space, 0.5 * (m + m.conj().T)) for m in out]
    return grid_times, states
