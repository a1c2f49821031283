import dataclasses

import numpy as np
import pytest

from qreadout._engine import run_batch, trajectory_rngs
from qreadout.models import (
    DOUBLE_SPACE,
    SINGLE_SPACE,
    ModelSpec,
    build_direct_drive_model,
    build_two_cavity_model,
    swap_ab_operator,
)
from qreadout.qcore import DensityMatrix, HilbertSpace, Operator, basis_ket, ket_state
from qreadout.trajectory import (
    DetectionRecord,
    StepSizeError,
    ensemble_average,
    sample_trajectory,
    step,
)
from qreadout.inference import lindblad_oracle, standard_hypotheses
from qreadout.qcore import trace_distance


def state(qubit, readout):
    return ket_state(SINGLE_SPACE, basis_ket(SINGLE_SPACE, {"qubit": qubit, "readout": readout}))


def test_step_dark_state():
    # |1, down> with no drive: zero click probability, state unchanged
    m = build_direct_drive_model(mu=5.0, omega_rd=0.0)
    rho = state(1, 0)
    rng = np.random.default_rng(0)
    out, event = step(rho, m, 1e-3, rng)
    assert event is None
    assert np.max(np.abs(out.entries - rho.entries)) < 1e-12


def test_step_jump_projects_to_ground():
    # force a click from |1, up>: post-jump state is exactly |1, down>
    m = build_direct_drive_model(mu=5.0, omega_rd=2.0)
    rho = state(1, 1)

    class AlwaysClick:
        def random(self):
            return 0.0
    out, event = step(rho, m, 1e-3, AlwaysClick())
    assert event == "D"
    assert np.max(np.abs(out.entries - state(1, 0).entries)) < 1e-12


def test_step_first_order_expansion_oracle():
    # one no-click step matches rho - i[H,rho]dt - (1/2){C^dag C, rho}dt
    # renormalized, to O(dt^2)
    m = build_direct_drive_model(mu=5.0, omega_rd=2.0)
    psi = np.zeros(6, dtype=complex)
    psi[2] = psi[3] = 1 / np.sqrt(2)   # |1> x (|down> + |up>)/sqrt2
    rho = DensityMatrix(SINGLE_SPACE, np.outer(psi, psi.conj()))
    dt = 1e-3

    class NeverClick:
        def random(self):
            return 1.0 - 1e-12

    h = m.hamiltonian.entries
    c = m.monitored_jumps[0].operator.entries
    cc = c.conj().T @ c
    exact = rho.entries - 1j * dt * (h @ rho.entries - rho.entries @ h) \
        - 0.5 * dt * (cc @ rho.entries + rho.entries @ cc)
    exact = exact / np.real(np.trace(exact))
    for integrator in ("euler", "exact"):
        got, event = _engine_one_step(m, rho, dt, integrator)
        assert event is None
        assert np.max(np.abs(got - exact)) < 5 * dt ** 2
    got_step, event = step(rho, m, dt, NeverClick())
    assert np.max(np.abs(got_step.entries - exact)) < 5 * dt ** 2


def _engine_one_step(model, rho, dt, integrator):
    class NeverClick:
        def random(self, n):
            return np.full(n, 1.0 - 1e-12)
    res = run_batch(model, rho.entries, dt, dt, rngs=[NeverClick()],
                    integrator=integrator, force_mixed=True)
    ev = res.events[0, 0]
    return res.final_states[0], (None if ev < 0 else model.detector_ids[ev])


def test_engine_matches_reference_step():
    # identical uniforms -> identical records and matching states
    m = build_direct_drive_model(mu=5.0, omega_rd=2.0, Gamma=0.05)
    h0 = standard_hypotheses()[0]
    T, dt, seed = 2.0, 1e-3, 77
    res = run_batch(m, h0.rho0.entries, T, dt, rngs=trajectory_rngs(seed, 0, 1),
                    integrator="euler", force_mixed=True)
    rng = trajectory_rngs(seed, 0, 1)[0]
    from qreadout.models import pi_pulse_unitary
    u = pi_pulse_unitary().entries
    rho = DensityMatrix(SINGLE_SPACE, u @ h0.rho0.entries @ u.conj().T)
    events = np.full(int(round(T / dt)), -1, dtype=np.int8)
    for i in range(len(events)):
        rho, det = step(rho, m, dt, rng)
        if det is not None:
            events[i] = m.detector_ids.index(det)
    assert np.array_equal(res.events[0], events)
    assert np.max(np.abs(res.final_states[0] - rho.entries)) < 1e-12


def test_step_size_guard():
    m = build_direct_drive_model(mu=5.0, omega_rd=2.0)
    rho = state(1, 1)  # unit excited population
    with pytest.raises(StepSizeError):
        step(rho, m, 0.2, np.random.default_rng(0))
    with pytest.raises(StepSizeError):
        run_batch(m, rho.entries, 0.4, 0.2, rngs=trajectory_rngs(0, 0, 1))


def test_record_roundtrip_bit_exact():
    m = build_direct_drive_model(mu=5.0, omega_rd=2.0)
    res = sample_trajectory(m, standard_hypotheses()[1].rho0, T=3.0, dt=1e-3, seed=5)
    text = res.record.to_csv()
    back = DetectionRecord.from_csv(text)
    assert back.dt == res.record.dt
    assert back.duration == res.record.duration
    assert back.detector_ids == res.record.detector_ids
    assert np.array_equal(back.events, res.record.events)
    assert back.to_csv() == text


def test_same_seed_bit_identical_records():
    m = build_direct_drive_model(mu=5.0, omega_rd=2.0)
    h1 = standard_hypotheses()[1]
    a = sample_trajectory(m, h1.rho0, T=5.0, dt=1e-3, seed=123)
    b = sample_trajectory(m, h1.rho0, T=5.0, dt=1e-3, seed=123)
    assert np.array_equal(a.record.events, b.record.events)
    c = sample_trajectory(m, h1.rho0, T=5.0, dt=1e-3, seed=124)
    assert not np.array_equal(a.record.events, c.record.events)


def test_strong_blockade_records_are_dark():
    # mu >> gamma with the qubit prepared in |0>: no fluorescence
    m = build_direct_drive_model(mu=100.0, omega_rd=2.0)
    h0 = standard_hypotheses()[0]
    for seed in range(20):
        res = sample_trajectory(m, h0.rho0, T=5.0, dt=1e-3, seed=seed, integrator="exact")
        assert res.record.total_count() == 0


def test_mean_counts_match_rate_formula():
    # ensemble-mean count over T approx gamma W^2/(gamma^2 + 2 W^2) T,
    # with the exact expectation from the Lindblad oracle as the tight check
    m = build_direct_drive_model(mu=5.0, omega_rd=2.0)
    h1 = standard_hypotheses()[1]
    T, dt, N = 25.0, 1e-3, 400
    res = run_batch(m, h1.rho0.entries, T, dt, rngs=trajectory_rngs(3, 0, N),
                    integrator="exact", sample_every=2500, store_events=False)
    mean_counts = res.n_clicks.sum(axis=1).mean()
    sem = res.n_clicks.sum(axis=1).std() / np.sqrt(N)

    times, states = lindblad_oracle(m, h1.rho0, T, 1e-2, sample_every=10)
    c = m.monitored_jumps[0].operator.entries
    flux = [np.real(np.trace(c @ s.entries @ c.conj().T)) for s in states]
    expected = np.trapezoid(flux, times)
    assert abs(mean_counts - expected) < 4 * sem
    assert abs(expected - 25.0 * 4.0 / 9.0) < 0.6  # steady-rate formula


def test_ensemble_average_single_trajectory():
    m = build_direct_drive_model(mu=5.0, omega_rd=2.0)
    h1 = standard_hypotheses()[1]
    times, avg = ensemble_average(m, h1.rho0, T=1.0, dt=1e-3, N=1, seed=9, sample_every=1000)
    single = sample_trajectory(m, h1.rho0, T=1.0, dt=1e-3, seed=9)
    assert np.max(np.abs(avg[-1].entries - single.final_state.entries)) < 1e-10


def test_jump_free_model_average_is_unitary():
    sp = HilbertSpace((("tls", 2),))
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    m = ModelSpec(sp, Operator(sp, 0.5 * sx))
    psi = np.array([1.0, 0.0], dtype=complex)
    times, avg = ensemble_average(m, psi, T=2.0, dt=1e-3, N=3, seed=0, sample_every=500)
    from scipy.linalg import expm
    for t, s in zip(times, avg):
        u = expm(-0.5j * sx * t)
        want = u @ np.outer(psi, psi.conj()) @ u.conj().T
        assert np.max(np.abs(s.entries - want)) < 2e-3  # first-order stepping


def test_ensemble_average_matches_lindblad():
    m = build_direct_drive_model(mu=5.0, omega_rd=2.0)
    h1 = standard_hypotheses()[1]
    times, avg = ensemble_average(m, h1.rho0, T=3.0, dt=1e-3, N=800, seed=4, sample_every=500)
    t2, oracle = lindblad_oracle(m, h1.rho0, T=3.0, dt=1e-3, sample_every=500)
    for a, b in zip(avg, oracle):
        assert trace_distance(a, b) < 0.05  # MC noise at N=800


def test_two_cavity_exchange_symmetry_until_minus_click():
    # no-click evolution and chi_plus clicks preserve [rho, SWAP] = 0;
    # only a chi_minus click breaks the exchange symmetry
    m = build_two_cavity_model(5.0, 2.0, eta=1.0, drive_off_time=None)
    from qreadout.entangle import initial_superposition
    from qreadout.models import pi_pulse_unitary
    u = (pi_pulse_unitary(DOUBLE_SPACE, "qubit_A")
         @ pi_pulse_unitary(DOUBLE_SPACE, "qubit_B")).entries
    psi0 = u @ initial_superposition()
    swap = swap_ab_operator().entries
    from qreadout.entangle import bell_vectors
    v4 = bell_vectors(excited_identification=True)[3]
    m_nosched = dataclasses.replace(m, schedule=())
    found_minus = False
    for seed in range(8):
        rho = DensityMatrix(DOUBLE_SPACE, np.outer(psi0, psi0.conj()))
        rng = trajectory_rngs(seed, 0, 1)[0]
        for _ in range(1500):
            rho, det = step(rho, m_nosched, 1e-3, rng)
            if det == "-":
                found_minus = True
                # the minus click populates the antisymmetric sector
                assert np.real(np.vdot(v4, rho.entries @ v4)) > 1e-3
                break
            comm = rho.entries @ swap - swap @ rho.entries
            assert np.max(np.abs(comm)) <= 1e-8
            assert np.real(np.vdot(v4, rho.entries @ v4)) <= 1e-8
        if found_minus:
            break
    assert found_minus


def test_dt_halving_moves_counts_less_than_two_percent():
    # Richardson robustness on a reduced-scale run; the acceptance suite
    # repeats this at N=2000
    m = build_direct_drive_model(mu=5.0, omega_rd=2.0)
    h1 = standard_hypotheses()[1]
    means = {}
    for dt in (1e-3, 5e-4):
        res = run_batch(m, h1.rho0.entries, 10.0, dt,
                        rngs=trajectory_rngs(8, 0, 800), sample_every=100000,
                        store_events=False)
        means[dt] = res.n_clicks.sum(axis=1).mean()
    assert abs(means[1e-3] - means[5e-4]) / means[5e-4] < 0.05  # noise at N=800
