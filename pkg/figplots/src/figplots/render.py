"""Render the paper-style figures from qreadout CSV datasets."""

from __future__ import annotations

import re
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .spec import FigureDataError, FigureSpec, floats, read_table

PALETTE = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple")


def render(spec: FigureSpec) -> Path:
    """Draw the figure and write the image; returns the output path.

    Inputs are validated before the output file is opened, and nothing in
    the image depends on wall-clock time, so repeated renders of the same
    datasets produce identical bytes.
    """
    inputs = spec.resolve_inputs()
    fig = _DRAW[spec.figure_id](inputs)
    out = Path(spec.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def _param_of(path: Path, prefix: str) -> str:
    m = re.search(prefix + r"([0-9.]+)", path.name)
    return m.group(1) if m else path.stem


def _qe_axes(ax, paths, label_prefix, with_counts=True, with_analytic=False):
    for color, p in zip(PALETTE, paths):
        t = read_table(p)
        label = f"{label_prefix} = {_param_of(p, label_prefix)}"
        ax.plot(floats(t, "time"), floats(t, "qe_bayes"), color=color,
                marker="o", markevery=max(1, len(t["time"]) // 20), ms=3,
                label=label)
        if with_counts:
            ax.plot(floats(t, "time"), floats(t, "qe_counts"), color=color,
                    ls=":", lw=1.2)
    if with_analytic:
        t = read_table(paths[0])
        ax.plot(floats(t, "time"), floats(t, "qe_analytic"), "k--", lw=1.4,
                label="strong-blockade limit")
    ax.set_xlabel(r"$t\,\gamma$")
    ax.set_ylabel(r"$Q_E$")
    ax.legend(fontsize=8)


def _draw_fig2a(inputs):
    fig, (top, bot) = plt.subplots(2, 1, figsize=(6, 5), sharex=True,
                                   height_ratios=[1, 2])
    clicks = read_table(inputs["clicks_example.csv"][0])
    labels = sorted(set(clicks["record_label"]))
    for i, lab in enumerate(labels):
        ts = [float(t) for l, t in zip(clicks["record_label"], clicks["click_time"])
              if l == lab]
        top.vlines(ts, i + 0.1, i + 0.9, color=PALETTE[i], lw=0.8)
    top.set_yticks([i + 0.5 for i in range(len(labels))], labels)
    top.set_ylabel("record")

    post = read_table(inputs["posterior_example.csv"][0])
    times = floats(post, "time")
    for i, lab in enumerate(labels):
        sel = np.array([l == lab for l in post["record_label"]])
        bot.plot(times[sel], floats(post, "p_h0")[sel], color=PALETTE[i],
                 label=f"P(h0) | {lab} record")
        bot.plot(times[sel], floats(post, "p_h1")[sel], color=PALETTE[i], ls="-.")
    bot.set_xlabel(r"$t\,\gamma$")
    bot.set_ylabel("posterior")
    bot.set_ylim(-0.02, 1.02)
    bot.legend(fontsize=8)
    fig.tight_layout()
    return fig


def _draw_fig2b(inputs):
    fig, ax = plt.subplots(figsize=(6, 4))
    _qe_axes(ax, inputs["qe_curve_mu*.csv"], "mu", with_counts=True, with_analytic=True)
    fig.tight_layout()
    return fig


def _draw_fig2c(inputs):
    fig, ax = plt.subplots(figsize=(5, 4))
    t = read_table(inputs["counts_histogram.csv"][0])
    counts = floats(t, "count")
    width = 0.4
    ax.bar(counts - width / 2, floats(t, "p_h0"), width, label="true h0")
    ax.bar(counts + width / 2, floats(t, "p_h1"), width, label="true h1")
    ax.set_xlabel(r"total count $N_T$" + f" (t = {t['time'][0]})")
    ax.set_ylabel("probability")
    ax.legend()
    fig.tight_layout()
    return fig


def _draw_fig3a(inputs):
    fig, ax = plt.subplots(figsize=(6, 4))
    for color, (pulsed, plain) in zip(PALETTE, zip(inputs["qe_curve_gamma*_pulse.csv"],
                                                   inputs["qe_curve_gamma*_nopulse.csv"])):
        g = _param_of(pulsed, "gamma")
        tp = read_table(pulsed)
        tn = read_table(plain)
        ax.plot(floats(tn, "time"), floats(tn, "qe_bayes"), color=color,
                label=f"decay rate {g}")
        ax.plot(floats(tp, "time"), floats(tp, "qe_bayes"), color=color, ls="--",
                label=f"decay rate {g}, re-excitation pulse")
    ax.set_xlabel(r"$t\,\gamma$")
    ax.set_ylabel(r"$Q_E$")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def _draw_fig3b(inputs):
    fig, ax = plt.subplots(figsize=(6, 4))
    _qe_axes(ax, inputs["qe_curve_omegaq*.csv"], "omegaq", with_counts=False)
    fig.tight_layout()
    return fig


def _draw_fig4a(inputs):
    fig, (top, bot) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    t = read_table(inputs["cumulative_counts.csv"][0])
    times = floats(t, "time")
    for name in t:
        if name.startswith("traj_h0_"):
            top.plot(times, floats(t, name), color=PALETTE[0], lw=0.6, alpha=0.6)
        elif name.startswith("traj_h1_"):
            top.plot(times, floats(t, name), color=PALETTE[1], lw=0.6, alpha=0.6)
    top.plot(times, floats(t, "mean_h0"), color=PALETTE[0], lw=2, label="mean, true h0")
    top.plot(times, floats(t, "mean_h1"), color=PALETTE[1], lw=2, label="mean, true h1")
    top.set_ylabel(r"$\sum_t dN_t$")
    top.legend(fontsize=8)

    post = read_table(inputs["posterior_example.csv"][0])
    ptimes = floats(post, "time")
    labels = sorted(set(post["record_label"]))
    for i, lab in enumerate(labels):
        sel = np.array([l == lab for l in post["record_label"]])
        bot.plot(ptimes[sel], floats(post, "p_h0")[sel], color=PALETTE[i],
                 label=f"P(h0) | {lab} record")
        bot.plot(ptimes[sel], floats(post, "p_h1")[sel], color=PALETTE[i], ls="-.")
    bot.set_xlabel(r"$t\,\gamma$")
    bot.set_ylabel("posterior")
    bot.legend(fontsize=8)
    fig.tight_layout()
    return fig


def _draw_fig4b(inputs):
    fig, ax = plt.subplots(figsize=(6, 4))
    _qe_axes(ax, inputs["qe_curve_mu*.csv"], "mu", with_counts=True)
    fig.tight_layout()
    return fig


def _draw_fig5(inputs):
    t = read_table(inputs["bell_populations.csv"][0])
    run_id = np.array([int(v) for v in t["run_id"]])
    times = floats(t, "time")
    fig, axes = plt.subplots(2, 2, figsize=(8, 6), sharex=True, sharey=True)
    for k, ax in enumerate(axes.ravel(), start=1):
        p = floats(t, f"p{k}")
        for rid in np.unique(run_id):
            sel = run_id == rid
            final = p[sel][-1]
            color = ("c" if final > 0.99 else "orange" if final < 0.01 else "0.6")
            ax.plot(times[sel], p[sel], color=color, lw=0.5, alpha=0.7)
        ax.set_title(rf"$\mathrm{{Tr}}(\rho\,|\psi_{k}\rangle\langle\psi_{k}|)$",
                     fontsize=9)
        ax.set_ylim(-0.02, 1.02)
    for ax in axes[1]:
        ax.set_xlabel(r"$t\,\gamma$")
    fig.tight_layout()
    return fig


def _draw_fig6(inputs):
    hist = read_table(inputs["fidelity_hist.csv"][0])
    sweep = read_table(inputs["fidelity_sweep.csv"][0])
    cells = sorted({(float(e), float(T)) for e, T in zip(hist["eta"], hist["T"])},
                   key=lambda c: (-c[0], -c[1]))
    n = len(cells)
    ncols = min(3, n)
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(4 * ncols, 3 * nrows),
                             squeeze=False)
    h_eta, h_T = floats(hist, "eta"), floats(hist, "T")
    s_eta, s_T = floats(sweep, "eta"), floats(sweep, "T")
    for ax, (eta, T) in zip(axes.ravel(), cells):
        sel = (h_eta == eta) & (h_T == T)
        lo = floats(hist, "bin_low")[sel]
        hi = floats(hist, "bin_high")[sel]
        cnt = floats(hist, "count")[sel]
        total = max(cnt.sum(), 1.0)
        ax.bar((lo + hi) / 2, cnt / total, width=(hi - lo), color="tab:orange",
               alpha=0.8, label="fidelity histogram")
        ax2 = ax.twinx()
        ssel = (s_eta == eta) & (s_T == T)
        ax2.plot(floats(sweep, "f")[ssel],
                 100 * floats(sweep, "fraction_at_least")[ssel],
                 color="tab:blue", marker="s", ms=3, label="cumulative %")
        ax2.set_ylabel("% of runs above f")
        ax.set_xlabel("fidelity")
        ax.set_ylabel("fraction of runs")
        ax.set_title(f"efficiency {eta:g}, T = {T:g}", fontsize=9)
    for ax in axes.ravel()[n:]:
        ax.set_visible(False)
    fig.tight_layout()
    return fig


_DRAW = {
    "fig2a": _draw_fig2a,
    "fig2b": _draw_fig2b,
    "fig2c": _draw_fig2c,
    "fig3a": _draw_fig3a,
    "fig3b": _draw_fig3b,
    "fig4a": _draw_fig4a,
    "fig4b": _draw_fig4b,
    "fig5": _draw_fig5,
    "fig6": _draw_fig6,
}
