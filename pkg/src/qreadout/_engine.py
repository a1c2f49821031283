"""Batched stochastic propagation of photon-counting trajectories.

The engine advances many trajectories of one model in lockstep so that the
per-step work becomes a handful of BLAS calls on stacked arrays instead of
Python-level loops.  Two state representations are used:

* pure state vectors, valid whenever the conditional dynamics maps pure
  states to pure states (no unmonitored decay, all detector efficiencies
  equal to one, pure initial state);
* density matrices otherwise, propagated in Kraus form
  rho -> M rho M^dag + sum_j S_j rho S_j^dag, where M is the one-step
  no-click propagator and the S_j are the deterministic sandwich terms
  (unmonitored decay and missed detections).

Per step and per trajectory exactly one uniform random number is consumed
and compared against the cumulative ladder of detector click probabilities
dp_k = eta_k Tr[C_k rho C_k^dag] dt; at most one click fires per step.
This fixed consumption rule makes records a pure function of the
trajectory's seed, independent of batching and worker layout.

The evolution is restricted to the subspace reachable from the initial
state under the model's operators (computed from exact sparsity patterns),
which is an exact reduction; states are embedded back into the full space
on output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .models import ModelSpec

_PATTERN_TOL = 0.0  # closure uses exact nonzero patterns of model operators


class StepSizeError(RuntimeError):
    """Total per-step click probability exceeded the 0.1 bound."""


def trajectory_rngs(master_seed: int, start: int, count: int,
                    arm: int | None = None) -> list[np.random.Generator]:
    """Per-trajectory random streams, a pure function of (seed, arm, index).

    Trajectory i uses spawn key (i,), or (arm, i) for multi-arm runs (for
    example, one arm per true hypothesis).  This counter-based rule makes
    every trajectory's stream independent of how trajectories are chunked
    over workers, so results are stable across worker counts.
    """
    key = (lambda i: (arm, start + i)) if arm is not None else (lambda i: (start + i,))
    return [np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(master_seed, spawn_key=key(i))))
        for i in range(count)]


# ---------------------------------------------------------------------------
# sparse helpers

def _as_perm(mat: np.ndarray):
    """(rows, cols, vals) if mat has at most one nonzero per row and column."""
    rows, cols = np.nonzero(mat)
    if len(rows) == 0:
        return np.array([], int), np.array([], int), np.array([], complex)
    if len(set(rows.tolist())) != len(rows) or len(set(cols.tolist())) != len(cols):
        return None
    return rows, cols, mat[rows, cols]


def _closure(support: np.ndarray, patterns: list[np.ndarray], dim: int) -> np.ndarray:
    """Indices reachable from `support` under repeated application of the patterns."""
    reach = np.zeros(dim, dtype=bool)
    reach[support] = True
    # undirected-ish forward closure: operators are applied repeatedly and
    # interleaved, so iterate to a fixed point
    while True:
        prev = reach.copy()
        for pat in patterns:
            reach |= pat[:, reach].any(axis=1)
        if (reach == prev).all():
            return np.nonzero(reach)[0]


@dataclass
class EngineResult:
    times: np.ndarray                 # (G,) grid times
    events: np.ndarray | None         # (B, n_steps) int8, -1 = no click
    loglik: np.ndarray                # (B, G) accumulated record log-likelihood
    final_states: np.ndarray          # (B, d, d) or, if final_pure, (B, d)
    final_pure: bool
    n_clicks: np.ndarray              # (B, K)
    first_click_step: np.ndarray      # (B, K), -1 if never
    observables: np.ndarray | None    # (B, G, n_obs) real expectations
    mean_states: np.ndarray | None    # (G, d, d) mean conditioned state
    max_before: np.ndarray | None     # (B, n_guards) running max before first click


class _Segment:
    """Compiled constant-generator stretch between schedule events."""

    def __init__(self, h_full: np.ndarray, model: ModelSpec, keep: np.ndarray,
                 dt: float, integrator: str, pure: bool):
        r = np.ix_(keep, keep)
        jump_full = [j.operator.entries for j in model.monitored_jumps]
        etas = np.array([j.efficiency for j in model.monitored_jumps])
        unmon = [c.entries for c in model.unmonitored_jumps]

        h_eff = h_full.astype(complex).copy()
        decay = sum((c.conj().T @ c for c in jump_full), np.zeros_like(h_eff))
        decay += sum((c.conj().T @ c for c in unmon), np.zeros_like(h_eff))
        h_eff = h_eff - 0.5j * decay
        h_eff_r = h_eff[r]
        if integrator == "euler":
            self.M = np.eye(len(keep), dtype=complex) - 1j * dt * h_eff_r
        elif integrator == "exact":
            self.M = expm(-1j * dt * h_eff_r)
        else:
            raise ValueError(f"unknown integrator {integrator!r}")
        self.Mh = np.ascontiguousarray(self.M.conj().T)

        self.jumps = [np.ascontiguousarray(c[r]) for c in jump_full]
        self.jump_perm = [_as_perm(c) for c in self.jumps]
        self.etas = etas
        # dp_k = dt * eta_k * Re( vec(rho) . vec(Q_k^T) ), Q_k = C_k^dag C_k
        qs = [e * (c.conj().T @ c) for e, c in zip(etas, self.jumps)]
        self.dp_mat = (np.stack([q.T.reshape(-1) for q in qs], axis=1) * dt
                       if qs else np.zeros((len(keep) ** 2, 0), dtype=complex))

        if pure:
            self.sandwiches = []
            return
        sands = []
        basis = model.missed_detection_basis
        if basis is not None and any(e < 1.0 for e in etas):
            sands.extend(b.entries[r] for b in basis)
        else:
            for e, c in zip(etas, self.jumps):
                if e < 1.0:
                    sands.append(np.sqrt(1.0 - e) * c)
        sands.extend(c[r] for c in unmon)
        self.sandwiches = []
        for s in sands:
            s = np.sqrt(dt) * s
            perm = _as_perm(s)
            self.sandwiches.append(("perm", perm) if perm is not None else ("dense", (s, s.conj().T)))


def _validate_missed_basis(model: ModelSpec, keep: np.ndarray) -> None:
    """The declared equivalent sandwich basis must reproduce sum_k (1-eta_k) C_k . C_k^dag."""
    r = np.ix_(keep, keep)
    n = len(keep)
    want = np.zeros((n * n, n * n), dtype=complex)
    for j in model.monitored_jumps:
        c = j.operator.entries[r]
        want += (1.0 - j.efficiency) * np.kron(c, c.conj())
    got = np.zeros_like(want)
    for b in model.missed_detection_basis:
        c = b.entries[r]
        got += np.kron(c, c.conj())
    if np.max(np.abs(want - got)) > 1e-12:
        raise ValueError("missed_detection_basis does not match sum of (1-eta) sandwich terms")


def run_batch(model: ModelSpec,
              state0: np.ndarray,
              T: float,
              dt: float,
              *,
              rngs: list[np.random.Generator] | None = None,
              replay_events: np.ndarray | None = None,
              n_traj: int | None = None,
              integrator: str = "euler",
              sample_every: int = 1,
              observables: tuple[np.ndarray, ...] = (),
              collect_mean: bool = False,
              store_events: bool = True,
              max_before: tuple[tuple[np.ndarray, str], ...] = (),
              validate_each_step: bool = False,
              force_mixed: bool = False) -> EngineResult:
    """Propagate a batch of trajectories (sampling) or replay fixed records.

    state0 is a full-space vector (pure) or density matrix, shared by all
    trajectories in the batch.  Exactly one of rngs / replay_events must be
    given; replay mode propagates the conditioned state of this model along
    each supplied record and accumulates its log-likelihood.
    """
    if (rngs is None) == (replay_events is None):
        raise ValueError("provide exactly one of rngs / replay_events")
    dim = model.space.total_dim
    n_steps = int(round(T / dt))
    if rngs is not None:
        B = len(rngs) if n_traj is None else n_traj
        if len(rngs) != B:
            raise ValueError("rngs length must equal n_traj")
    else:
        replay_events = np.asarray(replay_events)
        B, n_rec = replay_events.shape
        if n_rec != n_steps:
            raise ValueError(f"record has {n_rec} steps, expected round(T/dt) = {n_steps}")
    K = len(model.monitored_jumps)

    # schedule events by step index
    sched: dict[int, list] = {}
    for ev in model.schedule:
        step_idx = int(round(ev.time / dt))
        if not 0 <= step_idx <= n_steps:
            raise ValueError(f"schedule event at t={ev.time} outside [0, T]")
        sched.setdefault(step_idx, []).append(ev)

    amplitudes = {name: amp for name, _, amp in model.drives}

    state0 = np.asarray(state0, dtype=complex)
    pure_ok = (state0.ndim == 1 and not force_mixed
               and len(model.unmonitored_jumps) == 0
               and all(j.efficiency >= 1.0 for j in model.monitored_jumps))
    if state0.ndim == 1:
        psi0 = state0 / np.linalg.norm(state0)
        rho0_full = None
    else:
        psi0 = None
        rho0_full = state0 / np.real(np.trace(state0))

    # apply step-0 unitaries before computing the reachable subspace
    pre = [ev for ev in sched.pop(0, [])]
    for ev in pre:
        if ev.drive is not None:
            amplitudes[ev.drive[0]] = ev.drive[1]
        else:
            u = ev.unitary.entries
            if psi0 is not None:
                psi0 = u @ psi0
            else:
                rho0_full = u @ rho0_full @ u.conj().T

    # reachable subspace: exact sparsity closure of all generators and any
    # mid-run pulse unitaries
    patterns = [model.h_static.entries != 0]
    patterns += [term.entries != 0 for _, term, _ in model.drives]
    patterns += [j.operator.entries != 0 for j in model.monitored_jumps]
    patterns += [c.entries != 0 for c in model.unmonitored_jumps]
    for evs in sched.values():
        patterns += [ev.unitary.entries != 0 for ev in evs if ev.unitary is not None]
    support = (np.nonzero(np.abs(psi0) > 0)[0] if psi0 is not None
               else np.nonzero(np.abs(rho0_full).sum(axis=1) > 0)[0])
    keep = _closure(support, patterns, dim)
    d = len(keep)
    r = np.ix_(keep, keep)

    if model.missed_detection_basis is not None and any(
            j.efficiency < 1.0 for j in model.monitored_jumps):
        _validate_missed_basis(model, keep)

    obs_r = [np.ascontiguousarray(o[r]) for o in observables]
    guards = [(np.ascontiguousarray(v[keep]), det) for v, det in max_before]
    det_index = {j.detector_id: k for k, j in enumerate(model.monitored_jumps)}

    def compile_segment(pure):
        h = model.h_static.entries.copy()
        for name, term, _ in model.drives:
            h = h + amplitudes[name] * term.entries
        return _Segment(h, model, keep, dt, integrator, pure)

    # state batches in the reduced space
    if pure_ok:
        psi = np.tile(psi0[keep], (B, 1))
        rho = None
    else:
        if rho0_full is None:
            rho0_full = np.outer(psi0, psi0.conj())
        rho = np.tile(rho0_full[r], (B, 1, 1))
        psi = None

    grid_steps = list(range(0, n_steps + 1, max(1, sample_every)))
    if grid_steps[-1] != n_steps:
        grid_steps.append(n_steps)
    grid_pos = {s: i for i, s in enumerate(grid_steps)}
    G = len(grid_steps)

    times = np.array(grid_steps) * dt
    loglik_running = np.zeros(B)
    loglik = np.zeros((B, G))
    n_clicks = np.zeros((B, K), dtype=np.int64)
    first_click = -np.ones((B, K), dtype=np.int64)
    events_out = np.full((B, n_steps), -1, dtype=np.int8) if (store_events and rngs is not None) else None
    obs_out = np.zeros((B, G, len(obs_r))) if obs_r else None
    mean_out = np.zeros((G, d, d), dtype=complex) if collect_mean else None
    guard_max = np.zeros((B, len(guards))) if guards else None
    guard_open = np.ones((B, len(guards)), dtype=bool) if guards else None

    seg = compile_segment(pure_ok)

    def snapshot(gi):
        loglik[:, gi] = loglik_running
        if obs_out is not None:
            if psi is not None:
                for oi, o in enumerate(obs_r):
                    w = psi @ o.T
                    obs_out[:, gi, oi] = np.einsum('ij,ij->i', psi.conj(), w).real
            else:
                flat = rho.reshape(B, d * d)
                for oi, o in enumerate(obs_r):
                    obs_out[:, gi, oi] = (flat @ o.T.reshape(-1)).real
        if mean_out is not None:
            if psi is not None:
                mean_out[gi] = (psi.conj().T @ psi).T / B
            else:
                mean_out[gi] = rho.mean(axis=0)

    def apply_events(evs):
        nonlocal seg, psi, rho
        recompile = False
        for ev in evs:
            if ev.drive is not None:
                amplitudes[ev.drive[0]] = ev.drive[1]
                recompile = True
            else:
                u = ev.unitary.entries[r]
                if psi is not None:
                    psi = psi @ u.T
                else:
                    rho = np.einsum('ij,njk,lk->nil', u, rho, u.conj(), optimize=True)
        if recompile:
            seg = compile_segment(pure_ok)

    def compute_dp():
        # (B, K) click probabilities for this step, from the current state
        if K == 0:
            return np.zeros((B, 0))
        if psi is not None:
            dp = np.empty((B, K))
            for k, c in enumerate(seg.jumps):
                perm = seg.jump_perm[k]
                if perm is not None:
                    rows, cols, vals = perm
                    amp2 = np.abs(psi[:, cols] * vals) ** 2
                    dp[:, k] = seg.etas[k] * amp2.sum(axis=1) * dt
                else:
                    phi = psi @ c.T
                    dp[:, k] = seg.etas[k] * np.einsum('ij,ij->i', phi.conj(), phi).real * dt
            return dp
        flat = rho.reshape(B, d * d)
        return np.maximum((flat @ seg.dp_mat).real, 0.0)

    def apply_jump(idx, k):
        nonlocal psi, rho
        c = seg.jumps[k]
        if psi is not None:
            phi = psi[idx] @ c.T
            norm = np.linalg.norm(phi, axis=1, keepdims=True)
            psi[idx] = phi / np.maximum(norm, 1e-300)
        else:
            sub = c @ rho[idx] @ c.conj().T
            tr = np.einsum('nii->n', sub).real
            rho[idx] = sub / np.maximum(tr, 1e-300)[:, None, None]

    def no_click_update(rows):
        nonlocal psi, rho
        if psi is not None:
            out = psi[rows] @ seg.M.T
            norm = np.linalg.norm(out, axis=1, keepdims=True)
            psi[rows] = out / np.maximum(norm, 1e-300)
            return
        sub = rho[rows]
        nb = sub.shape[0]
        w = (sub.reshape(nb * d, d) @ seg.Mh).reshape(nb, d, d)
        x = np.ascontiguousarray(np.conjugate(w.transpose(0, 2, 1)))
        out = (x.reshape(nb * d, d) @ seg.Mh).reshape(nb, d, d)
        for kind, payload in seg.sandwiches:
            if kind == "perm":
                srows, scols, svals = payload
                if len(srows):
                    out[:, srows[:, None], srows[None, :]] += (
                        np.outer(svals, svals.conj())[None, :, :]
                        * sub[:, scols[:, None], scols[None, :]])
            else:
                s, sh = payload
                w2 = (sub.reshape(nb * d, d) @ sh).reshape(nb, d, d)
                x2 = np.ascontiguousarray(np.conjugate(w2.transpose(0, 2, 1)))
                out += (x2.reshape(nb * d, d) @ sh).reshape(nb, d, d)
        tr = np.einsum('nii->n', out).real
        rho[rows] = out / np.maximum(tr, 1e-300)[:, None, None]

    def validate_states():
        states = (np.einsum('ni,nj->nij', psi.conj(), psi).conj() if psi is not None else rho)
        for s in states:
            h = np.max(np.abs(s - s.conj().T))
            tr = np.trace(s).real
            lo = np.linalg.eigvalsh(s)[0]
            if h > 1e-10 or abs(tr - 1) > 1e-9 or lo < -1e-8:
                raise RuntimeError(
                    f"state invariant violated: herm {h:.2e}, trace dev {abs(tr-1):.2e}, min eig {lo:.2e}")

    snapshot(0)
    all_rows = np.arange(B)
    chunk = 2048
    u_chunk = None
    u_base = 0

    for step in range(n_steps):
        dp = compute_dp()
        dp_tot = dp.sum(axis=1)
        if dp_tot.size and dp_tot.max() >= 0.1:
            raise StepSizeError(
                f"total click probability {dp_tot.max():.3f} >= 0.1 at step {step}; reduce dt")

        if rngs is not None:
            if u_chunk is None or step - u_base >= u_chunk.shape[1]:
                u_base = step
                width = min(chunk, n_steps - step)
                u_chunk = np.empty((B, width))
                for b in range(B):
                    u_chunk[b] = rngs[b].random(width)
            u = u_chunk[:, step - u_base]
            if K:
                cum = np.cumsum(dp, axis=1)
                ks = K - (u[:, None] < cum).sum(axis=1)  # K -> no click
            else:
                ks = np.zeros(B, dtype=int)
            clicked = ks < K if K else np.zeros(B, dtype=bool)
            if events_out is not None and clicked.any():
                events_out[clicked, step] = ks[clicked].astype(np.int8)
        else:
            ks = replay_events[:, step].astype(int)
            ks = np.where(ks < 0, K, ks)
            clicked = ks < K

        if clicked.any():
            with np.errstate(divide='ignore'):
                for k in range(K):
                    idx = all_rows[ks == k]
                    if idx.size:
                        loglik_running[idx] += np.log(dp[idx, k])
                        apply_jump(idx, k)
                        n_clicks[idx, k] += 1
                        newly = idx[first_click[idx, k] < 0]
                        first_click[newly, k] = step
            rows = all_rows[~clicked]
            if rows.size:
                loglik_running[rows] += np.log1p(-dp_tot[rows])
                no_click_update(rows)
        else:
            loglik_running += np.log1p(-dp_tot)
            no_click_update(all_rows)

        if guards:
            for gi2, (v, det) in enumerate(guards):
                if psi is not None:
                    val = np.abs(psi @ v.conj()) ** 2
                else:
                    val = np.einsum('i,nij,j->n', v.conj(), rho, v).real
                k = det_index[det]
                open_rows = guard_open[:, gi2] & (first_click[:, k] < 0)
                guard_open[:, gi2] = open_rows
                np.maximum(guard_max[open_rows, gi2], val[open_rows],
                           out=guard_max[open_rows, gi2])

        if step + 1 in sched:
            apply_events(sched[step + 1])
        if validate_each_step:
            validate_states()
        gi = grid_pos.get(step + 1)
        if gi is not None:
            snapshot(gi)

    # embed back into the full space
    if psi is not None:
        final = np.zeros((B, dim), dtype=complex)
        final[:, keep] = psi
        final_pure = True
    else:
        final = np.zeros((B, dim, dim), dtype=complex)
        final[np.ix_(all_rows, keep, keep)] = rho
        final_pure = False
    mean_full = None
    if mean_out is not None:
        mean_full = np.zeros((G, dim, dim), dtype=complex)
        mean_full[np.ix_(np.arange(G), keep, keep)] = mean_out

    return EngineResult(times=times, events=events_out, loglik=loglik,
                        final_states=final, final_pure=final_pure,
                        n_clicks=n_clicks, first_click_step=first_click,
                        observables=obs_out, mean_states=mean_full,
                        max_before=guard_max)
