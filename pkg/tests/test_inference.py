import itertools

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from qreadout._engine import run_batch, trajectory_rngs
from qreadout.inference import (
    TIE,
    Hypothesis,
    bayesian_filter,
    classify,
    count_error_from_samples,
    estimate_qe,
    integrated_count_error,
    lindblad_oracle,
    qe_analytic_large_mu,
    qe_sample_chunk,
    standard_hypotheses,
)
from qreadout.models import ModelSpec, MonitoredJump, build_direct_drive_model
from qreadout.qcore import DensityMatrix, HilbertSpace, Operator
from qreadout.trajectory import DetectionRecord, sample_trajectory


# ---------------------------------------------------------------------------
# analytic no-click error probability

def test_qe_analytic_at_zero():
    for omega in (0.3, 0.5, 2.0, 7.0):
        assert abs(qe_analytic_large_mu(0.0, omega, 1.0, 0.5) - 0.5) < 1e-12
        assert abs(qe_analytic_large_mu(0.0, omega, 1.0, 0.3) - 0.3) < 1e-12


def test_qe_analytic_vanishes_at_long_times():
    assert qe_analytic_large_mu(40.0, 2.0) < 1e-8


def test_qe_analytic_subcritical_is_real_and_continuous():
    # below omega = gamma/2 the oscillation frequency is imaginary; the
    # hyperbolic continuation must join smoothly across the critical point
    ts = np.linspace(0.0, 10.0, 11)
    lo = qe_analytic_large_mu(ts, 0.4999, 1.0)
    crit = qe_analytic_large_mu(ts, 0.5, 1.0)
    hi = qe_analytic_large_mu(ts, 0.5001, 1.0)
    assert np.all(np.isfinite(lo)) and np.all(lo >= 0)
    assert np.max(np.abs(lo - crit)) < 1e-3
    assert np.max(np.abs(hi - crit)) < 1e-3


def test_qe_analytic_against_no_jump_trace_oracle():
    # integrate the no-click master equation from |1, down> and take the
    # trace: that survival probability times the prior is the analytic value
    omega, gamma, t_probe = 2.0, 1.0, 2.0
    sm = np.array([[0, 1], [0, 0]], dtype=complex)
    h = 0.5 * omega * (sm + sm.T)
    c = np.sqrt(gamma) * sm
    cc = c.conj().T @ c

    def rhs(t, y):
        r = y.reshape(2, 2)
        dr = -1j * (h @ r - r @ h) - 0.5 * (cc @ r + r @ cc)
        return dr.reshape(-1)

    rho0 = np.diag([1.0, 0.0]).astype(complex)
    sol = solve_ivp(rhs, (0, t_probe), rho0.reshape(-1), rtol=1e-11, atol=1e-13)
    survival = np.real(np.trace(sol.y[:, -1].reshape(2, 2)))
    assert abs(qe_analytic_large_mu(t_probe, omega, gamma, 0.5) - 0.5 * survival) < 1e-6


# ---------------------------------------------------------------------------
# filtering

def toy_model(omega=1.0, gamma=1.0):
    sp = HilbertSpace((("tls", 2),))
    sm = np.array([[0, 1], [0, 0]], dtype=complex)
    h = Operator(sp, 0.5 * omega * (sm + sm.T))
    jump = MonitoredJump(Operator(sp, np.sqrt(gamma) * sm), "D", 1.0)
    return ModelSpec(sp, h, monitored_jumps=(jump,))


def toy_hypotheses():
    sp = HilbertSpace((("tls", 2),))
    ground = DensityMatrix(sp, np.diag([1.0, 0.0]))
    excited = DensityMatrix(sp, np.diag([0.0, 1.0]))
    return (Hypothesis("g", ground, 0.5), Hypothesis("e", excited, 0.5))


def test_filter_matches_brute_force_product():
    # 10-step synthetic record, hand-rolled per-step probabilities
    model = toy_model()
    hyps = toy_hypotheses()
    dt = 0.05
    events = np.array([-1, -1, 0, -1, -1, -1, 0, -1, -1, -1], dtype=np.int8)
    record = DetectionRecord(dt, 10 * dt, ("D",), events)
    trace = bayesian_filter(record, model, hyps, integrator="euler")

    h = model.hamiltonian.entries
    c = model.monitored_jumps[0].operator.entries
    h_eff = h - 0.5j * (c.conj().T @ c)
    m = np.eye(2) - 1j * dt * h_eff
    logs = []
    for hyp in hyps:
        rho = hyp.rho0.entries.copy()
        log_l = 0.0
        for e in events:
            dp = np.real(np.trace(c @ rho @ c.conj().T)) * dt
            if e == 0:
                log_l += np.log(dp)
                rho = c @ rho @ c.conj().T
            else:
                log_l += np.log1p(-dp)
                rho = m @ rho @ m.conj().T
            rho = rho / np.real(np.trace(rho))
        logs.append(log_l)
    want = np.exp(logs) / np.exp(logs).sum()
    assert np.max(np.abs(trace.probabilities[-1] - want)) < 1e-10


def test_identical_hypotheses_posteriors_stay_at_priors():
    model = toy_model()
    sp = model.space
    ground = DensityMatrix(sp, np.diag([1.0, 0.0]))
    hyps = (Hypothesis("a", ground, 0.25), Hypothesis("b", ground, 0.75))
    events = np.full(50, -1, dtype=np.int8)
    record = DetectionRecord(0.01, 0.5, ("D",), events)
    trace = bayesian_filter(record, model, hyps)
    assert np.max(np.abs(trace.probabilities - np.array([0.25, 0.75]))) < 1e-12
    assert np.max(np.abs(trace.probabilities.sum(axis=1) - 1.0)) < 1e-9


def test_zero_probability_click_kills_hypothesis():
    # hypothesis pinned to a dark state assigns dp = 0 to any click; its
    # posterior becomes exactly zero and stays there (handled, not an abort)
    model = toy_model(omega=0.0)
    hyps = toy_hypotheses()
    events = np.array([-1, -1, 0, -1], dtype=np.int8)
    record = DetectionRecord(0.01, 0.04, ("D",), events)
    trace = bayesian_filter(record, model, hyps)
    assert trace.probabilities[-1][0] == 0.0
    assert trace.probabilities[-1][1] == 1.0
    assert np.isneginf(trace.log_likelihoods[-1][0])


def test_strong_blockade_single_click_identifies_excited():
    m = build_direct_drive_model(mu=100.0, omega_rd=2.0)
    hyps = standard_hypotheses()
    for seed in range(30):
        res = sample_trajectory(m, hyps[1].rho0, T=6.0, dt=1e-3, seed=seed,
                                integrator="exact", sample_every=6000)
        if res.record.total_count() >= 1:
            trace = bayesian_filter(res.record, m, hyps, sample_every=6000,
                                    integrator="exact")
            assert trace.probabilities[-1][1] > 0.99
            assert classify(trace) == "h1"
            return
    pytest.fail("no record with a click found")


def test_classify_and_tie():
    times = np.array([0.0, 1.0])
    from qreadout.inference import PosteriorTrace
    tr = PosteriorTrace(times, ("h0", "h1"), np.array([[0.5, 0.5], [0.9, 0.1]]),
                        np.zeros((2, 2)))
    assert classify(tr) == "h0"
    tie = PosteriorTrace(times, ("h0", "h1"), np.array([[0.5, 0.5], [0.5, 0.5]]),
                         np.zeros((2, 2)))
    assert classify(tie) == TIE


def test_filter_loglik_self_consistency():
    # replaying a sampled record under its true hypothesis reproduces the
    # sampler's stored log-likelihood
    m = build_direct_drive_model(mu=5.0, omega_rd=2.0, Gamma=0.05)
    h = standard_hypotheses()
    for arm in (0, 1):
        res = run_batch(m, h[arm].rho0.entries, 3.0, 1e-3,
                        rngs=trajectory_rngs(31, 0, 20, arm=arm), sample_every=300)
        rep = run_batch(m, h[arm].rho0.entries, 3.0, 1e-3,
                        replay_events=res.events, sample_every=300, store_events=False)
        assert np.max(np.abs(res.loglik - rep.loglik)) < 1e-8


def test_estimate_qe_identical_hypotheses_is_half():
    model = toy_model()
    sp = model.space
    ground = DensityMatrix(sp, np.diag([1.0, 0.0]))
    hyps = (Hypothesis("a", ground, 0.5), Hypothesis("b", ground, 0.5))
    curve = estimate_qe(model, hyps, T=0.5, dt=1e-2, N=200, seed=0, sample_every=10)
    # zero information: every classification is an exact tie
    assert np.max(np.abs(curve.qe_bayes - 0.5)) < 1e-12


def test_estimate_qe_matches_exact_enumeration():
    # total-variation oracle: enumerate every record of a coarse grid and
    # sum min over hypotheses of prior-weighted record probabilities
    mu, om, T, dt = 1.25, 2.0, 1.2, 0.1
    n = int(round(T / dt))
    m = build_direct_drive_model(mu=mu, omega_rd=om)
    hyps = standard_hypotheses()
    events = []
    for k in range(5):
        for pos in itertools.combinations(range(n), k):
            ev = -np.ones(n, dtype=np.int8)
            for p in pos:
                ev[p] = 0
            events.append(ev)
    events = np.array(events)
    ps = []
    for h in hyps:
        res = run_batch(m, h.rho0.entries, T, dt, replay_events=events,
                        sample_every=n, integrator="exact", store_events=False)
        ps.append(np.exp(res.loglik[:, -1]))
    coverage = min(p.sum() for p in ps)
    assert coverage > 0.999
    exact = np.minimum(ps[0], ps[1]).sum() / 2
    curve = estimate_qe(m, hyps, T=T, dt=dt, N=3000, seed=3, sample_every=n,
                        integrator="exact", include_counts=False)
    assert abs(curve.qe_bayes[-1] - exact) < 4 * curve.qe_stderr[-1] + 1e-3


def test_count_error_identical_distributions():
    rng = np.random.default_rng(0)
    a = rng.poisson(40.0, 4000)
    b = rng.poisson(40.0, 4000)
    est = count_error_from_samples([a, b])
    assert 0.45 <= est <= 0.5


def test_count_error_separated_distributions():
    # variance debiasing floors sparse tail bins at (a+b)/2, leaving a
    # residual of order (occupied single-count bins)/2N
    rng = np.random.default_rng(1)
    a = rng.poisson(2.0, 4000)
    b = rng.poisson(60.0, 4000)
    assert count_error_from_samples([a, b]) < 5e-3


def test_integrated_count_error_runs():
    m = build_direct_drive_model(mu=5.0, omega_rd=2.0)
    err = integrated_count_error(m, standard_hypotheses(), T=5.0, dt=1e-3, N=300, seed=2)
    assert 0.0 <= err <= 0.5


# ---------------------------------------------------------------------------
# Lindblad oracle

def test_lindblad_oracle_unitary_when_no_jumps():
    sp = HilbertSpace((("tls", 2),))
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    m = ModelSpec(sp, Operator(sp, 0.5 * sx))
    psi = np.array([1.0, 0.0], dtype=complex)
    times, states = lindblad_oracle(m, psi, T=3.0, dt=1e-2, sample_every=100)
    from scipy.linalg import expm
    for t, s in zip(times, states):
        u = expm(-0.5j * sx * t)
        want = u @ np.outer(psi, psi.conj()) @ u.conj().T
        assert np.max(np.abs(s.entries - want)) < 1e-7


def test_lindblad_oracle_preserves_trace():
    m = build_direct_drive_model(mu=5.0, omega_rd=2.0, Gamma=0.05, pi_times=(0.0, 10.0))
    h0 = standard_hypotheses()[0]
    times, states = lindblad_oracle(m, h0.rho0, T=30.0, dt=1e-2, sample_every=300)
    for s in states:
        assert abs(np.trace(s.entries).real - 1.0) < 1e-8
        s.validate()


def test_lindblad_steady_state_click_rate():
    # steady excited population of the resonant readout ion matches the
    # click-rate formula W^2/(gamma^2 + 2 W^2)
    m = build_direct_drive_model(mu=5.0, omega_rd=2.0)
    h1 = standard_hypotheses()[1]
    times, states = lindblad_oracle(m, h1.rho0, T=30.0, dt=1e-2, sample_every=3000)
    p_up = np.zeros((6, 6)); p_up[3, 3] = 1.0
    got = np.real(np.trace(p_up @ states[-1].entries))
    assert abs(got - 4.0 / 9.0) < 1e-6


def test_priors_must_sum_to_one():
    m = toy_model()
    sp = m.space
    g = DensityMatrix(sp, np.diag([1.0, 0.0]))
    bad = (Hypothesis("a", g, 0.5), Hypothesis("b", g, 0.6))
    record = DetectionRecord(0.01, 0.05, ("D",), np.full(5, -1, dtype=np.int8))
    with pytest.raises(ValueError):
        bayesian_filter(record, m, bad)
