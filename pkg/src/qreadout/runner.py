"""Configuration-driven experiment campaigns.

Dispatches a validated ExperimentConfig to the trajectory and inference
machinery, optionally fanning sampling chunks out to a process pool, and
writes the datasets consumed by plotting (CSV with documented headers)
plus a reproducibility manifest.  Trajectory streams are derived from
(seed, arm, index) alone and chunks have a fixed size, so every output
byte except the manifest timestamp is a pure function of (config, seed),
independent of worker count.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .entangle import EntangleConfig, run_protocol_ensemble, fidelity_sweep
from .inference import (
    QE_CHUNK,
    Hypothesis,
    bayesian_filter,
    estimate_qe,
    qe_analytic_large_mu,
    qe_sample_chunk,
    standard_hypotheses,
)
from .models import ModelSpec, build_direct_drive_model, build_reflection_model
from .trajectory import DetectionRecord, sample_trajectory


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def _auto_workers(cfg: ExperimentConfig) -> int:
    if cfg.n_workers > 0:
        return cfg.n_workers
    return max(1, min(os.cpu_count() or 1, 8))


def _pool_map(fn, tasks: list[tuple], n_workers: int) -> list:
    """Order-preserving map; results are merged by task index."""
    if n_workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(n_workers, len(tasks))) as pool:
        futures = [pool.submit(fn, *t) for t in tasks]
        return [f.result() for f in futures]


def _model_for(cfg: ExperimentConfig, mu: float, Gamma: float = 0.0,
               omega_q: float = 0.0, pi_times: tuple[float, ...] | None = None) -> ModelSpec:
    pi = tuple(cfg.t_pi) if pi_times is None else pi_times
    if cfg.mode == "readout-reflection":
        return build_reflection_model(mu=mu, beta=cfg.beta, gamma=cfg.gamma,
                                      delta=cfg.delta, omega_q=omega_q, pi_times=pi)
    return build_direct_drive_model(mu=mu, omega_rd=cfg.omega_rd, delta=cfg.delta,
                                    gamma=cfg.gamma, Gamma=Gamma, omega_q=omega_q,
                                    pi_times=pi)


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Execute the campaign; returns a summary dict of written files."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    if cfg.mode in ("readout-direct", "readout-decay", "readout-reflection"):
        files = _run_readout(cfg, out)
    elif cfg.mode == "entangle":
        files = _run_entangle(cfg, out)
    else:
        raise ValueError(f"unknown mode {cfg.mode!r}")
    manifest = _write_manifest(cfg, out, files, time.time() - t0)
    return {"out_dir": str(out), "files": files + [manifest]}


# ---------------------------------------------------------------------------
# readout modes

def _qe_variant(cfg: ExperimentConfig, model: ModelSpec, T: float,
                hyps: tuple[Hypothesis, ...], n_workers: int,
                store_events: bool = False):
    se = cfg.resolved_sample_every(T)
    tasks = [(model, hyps, T, cfg.dt, cfg.seed, arm, start,
              min(QE_CHUNK, cfg.n_traj - start), se, cfg.integrator, True, store_events)
             for arm in range(len(hyps))
             for start in range(0, cfg.n_traj, QE_CHUNK)]
    chunks = _pool_map(qe_sample_chunk, tasks, n_workers)
    curve = estimate_qe(model, hyps, T, cfg.dt, cfg.n_traj, seed=cfg.seed,
                        sample_every=se, integrator=cfg.integrator,
                        chunk_results=chunks)
    return curve, chunks


def _write_qe_csv(path: Path, curve, analytic_omega: float | None, gamma: float) -> None:
    header = ["time", "qe_bayes", "qe_bayes_stderr", "qe_counts"]
    cols = [curve.times, curve.qe_bayes, curve.qe_stderr, curve.qe_counts]
    if analytic_omega is not None:
        header.append("qe_analytic")
        cols.append(qe_analytic_large_mu(curve.times, analytic_omega, gamma))
    _write_csv(path, header, zip(*cols))


def _write_examples(cfg: ExperimentConfig, model: ModelSpec, T: float,
                    hyps, out: Path) -> list[str]:
    """One example record per hypothesis: posterior trace and click times."""
    se = cfg.resolved_sample_every(T)
    post_rows, click_rows = [], []
    for arm, h in enumerate(hyps):
        traj = sample_trajectory(model, h.rho0, T, cfg.dt, seed=cfg.seed + 101 + arm,
                                 integrator=cfg.integrator, sample_every=se)
        trace = bayesian_filter(traj.record, model, hyps, sample_every=se,
                                integrator=cfg.integrator)
        for t, p in zip(trace.times, trace.probabilities):
            post_rows.append((h.label, t, p[0], p[1]))
        for t in traj.record.click_times():
            click_rows.append((h.label, t))
    _write_csv(out / "posterior_example.csv",
               ["record_label", "time", "p_h0", "p_h1"], post_rows)
    _write_csv(out / "clicks_example.csv", ["record_label", "click_time"], click_rows)
    return ["posterior_example.csv", "clicks_example.csv"]


def _run_readout(cfg: ExperimentConfig, out: Path) -> list[str]:
    hyps = standard_hypotheses()
    n_workers = _auto_workers(cfg)
    T = cfg.T[0]
    files: list[str] = []
    last = None  # (model, curve, chunks) of the final primary variant

    if cfg.mode == "readout-decay":
        variants = []
        for G in cfg.Gamma:
            variants.append((f"qe_curve_gamma{G:g}_pulse.csv", dict(Gamma=G), None))
            if cfg.compare_no_pulse:
                variants.append((f"qe_curve_gamma{G:g}_nopulse.csv",
                                 dict(Gamma=G), (0.0,)))
        for W in cfg.omega_q:
            variants.append((f"qe_curve_omegaq{W:g}.csv",
                             dict(Gamma=cfg.Gamma[0], omega_q=W), (0.0,)))
        analytic = None
    else:
        variants = [(f"qe_curve_mu{mu:g}.csv", dict(mu=mu), None) for mu in cfg.mu]
        analytic = cfg.omega_rd if cfg.mode == "readout-direct" else None

    for fname, params, pi_override in variants:
        model = _model_for(cfg, params.get("mu", cfg.mu[0]),
                           Gamma=params.get("Gamma", 0.0),
                           omega_q=params.get("omega_q", 0.0),
                           pi_times=pi_override)
        curve, chunks = _qe_variant(cfg, model, T, hyps, n_workers,
                                    store_events=cfg.save_records)
        _write_qe_csv(out / fname, curve, analytic, cfg.gamma)
        files.append(fname)
        if cfg.save_records:
            files += _dump_records(cfg, out, chunks, T)
        last = (model, curve, chunks)

    model, curve, chunks = last
    files += _write_counts_outputs(cfg, out, curve, chunks, T)
    files += _write_examples(cfg, model, T, hyps, out)
    return files


def _write_counts_outputs(cfg, out: Path, curve, chunks, T: float) -> list[str]:
    hist_time = cfg.hist_time if cfg.hist_time >= 0 else T
    times = curve.times
    gi = int(np.argmin(np.abs(times - hist_time)))
    per_arm = len(chunks) // 2
    counts = [np.concatenate([c["counts_grid"] for c in chunks[a * per_arm:(a + 1) * per_arm]])
              for a in range(2)]
    top = max(int(c[:, gi].max(initial=0)) for c in counts) + 1
    edges = np.arange(0, top + 1)
    hists = [np.histogram(c[:, gi], bins=edges)[0] / len(c) for c in counts]
    rows = [(times[gi], int(k), hists[0][k], hists[1][k]) for k in range(top)]
    _write_csv(out / "counts_histogram.csv", ["time", "count", "p_h0", "p_h1"], rows)

    n_ex = min(10, counts[0].shape[0])
    header = (["time", "mean_h0", "mean_h1"]
              + [f"traj_h0_{i}" for i in range(n_ex)] + [f"traj_h1_{i}" for i in range(n_ex)])
    rows = []
    for g, t in enumerate(times):
        rows.append((t, counts[0][:, g].mean(), counts[1][:, g].mean(),
                     *counts[0][:n_ex, g], *counts[1][:n_ex, g]))
    _write_csv(out / "cumulative_counts.csv", header, rows)
    return ["counts_histogram.csv", "cumulative_counts.csv"]


def _dump_records(cfg, out: Path, chunks, T: float) -> list[str]:
    rec_dir = out / "records"
    rec_dir.mkdir(exist_ok=True)
    written = []
    per_arm = len(chunks) // 2
    for arm in range(2):
        idx = 0
        for c in chunks[arm * per_arm:(arm + 1) * per_arm]:
            for ev in c["events"]:
                rec = DetectionRecord(cfg.dt, T, ("D",), ev)
                name = f"records/h{arm}_traj{idx:05d}.csv"
                (out / name).write_text(rec.to_csv())
                written.append(name)
                idx += 1
    return written


# ---------------------------------------------------------------------------
# entangle mode

def _entangle_chunk(ecfg: EntangleConfig, N: int, seed: int, start: int,
                    trace_count: int):
    # trace_count is a global run-index threshold, shared by every chunk
    outs, traces = run_protocol_ensemble(
        ecfg, min(QE_CHUNK, N - start), seed=seed, start=start,
        trace_count=trace_count)
    rows = [(o.populations, o.heralded_label, o.fidelity, o.purity,
             o.n_plus_clicks, o.n_minus_clicks) for o in outs]
    return rows, traces


def _run_entangle(cfg: ExperimentConfig, out: Path) -> list[str]:
    n_workers = _auto_workers(cfg)
    etas = cfg.detector_efficiency
    Ts = cfg.T
    files = []
    f_grid = np.round(np.linspace(0.5, 1.0, 51), 3)
    sweep_rows, hist_rows = [], []
    hist_edges = np.round(np.linspace(0.0, 1.0, 51), 3)

    for ci, eta in enumerate(etas):
        for cj, T in enumerate(Ts):
            ecfg = EntangleConfig(
                mu=cfg.mu[0], omega_rd=cfg.omega_rd, gamma=cfg.gamma,
                detector_efficiency=eta, T=T,
                drive_off=(cfg.drive_off if cfg.drive_off >= 0 else None),
                relax_window=cfg.relax_window, dt=cfg.dt, integrator=cfg.integrator)
            primary = ci == 0 and cj == 0
            trace_count = cfg.trace_count if primary else 0
            seed = cfg.seed + 7919 * (ci * len(Ts) + cj)
            tasks = [(ecfg, cfg.n_traj, seed, start, trace_count)
                     for start in range(0, cfg.n_traj, QE_CHUNK)]
            results = _pool_map(_entangle_chunk, tasks, n_workers)
            rows = [r for res in results for r in res[0]]
            fids = np.array([r[2] for r in rows])

            if primary:
                table = [(i, r[4], r[5], *r[0], r[2], r[1]) for i, r in enumerate(rows)]
                _write_csv(out / "herald_table.csv",
                           ["run_id", "n_plus_clicks", "n_minus_clicks",
                            "p1", "p2", "p3", "p4", "fidelity", "heralded_label"],
                           table)
                files.append("herald_table.csv")
                traces = [res[1] for res in results if res[1] is not None]
                if traces:
                    rows_tr = []
                    run_id = 0
                    for tr in traces:
                        for k in range(tr.populations.shape[0]):
                            for t, p in zip(tr.times, tr.populations[k]):
                                rows_tr.append((run_id, t, *p))
                            run_id += 1
                    _write_csv(out / "bell_populations.csv",
                               ["run_id", "time", "p1", "p2", "p3", "p4"], rows_tr)
                    files.append("bell_populations.csv")

            for f in f_grid:
                sweep_rows.append((eta, T, f, float(np.mean(fids >= f))))
            counts, _ = np.histogram(fids, bins=hist_edges)
            for lo, hi, n in zip(hist_edges[:-1], hist_edges[1:], counts):
                hist_rows.append((eta, T, lo, hi, int(n)))

    _write_csv(out / "fidelity_sweep.csv", ["eta", "T", "f", "fraction_at_least"], sweep_rows)
    _write_csv(out / "fidelity_hist.csv", ["eta", "T", "bin_low", "bin_high", "count"], hist_rows)
    files += ["fidelity_sweep.csv", "fidelity_hist.csv"]
    return files


def _write_manifest(cfg: ExperimentConfig, out: Path, files: list[str],
                    elapsed: float) -> str:
    lines = [f"qreadout {__version__}", f"timestamp: {time.strftime('%Y-%m-%dT%H:%M:%S')}",
             f"elapsed_seconds: {elapsed:.1f}", "", "[config]"]
    for key, val in sorted(asdict(cfg).items()):
        lines.append(f"{key} = {val}")
    lines.append("")
    lines.append("[outputs]")
    lines.extend(sorted(files))
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    return "manifest.txt"
