"""Figure specifications: which datasets each figure needs, with schemas.

A FigureSpec names a figure_id, the directory holding the CSV datasets
written by the `qreadout` CLI, and the output image path.  Validation
resolves the input files and checks their columns before any drawing
happens, so a failed render never leaves a partial output file.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

FIGURE_IDS = ("fig2a", "fig2b", "fig2c", "fig3a", "fig3b",
              "fig4a", "fig4b", "fig5", "fig6")

QE_COLS = ("time", "qe_bayes", "qe_bayes_stderr", "qe_counts")

#: figure_id -> list of (glob pattern, required columns)
REQUIREMENTS: dict[str, list[tuple[str, tuple[str, ...]]]] = {
    "fig2a": [("posterior_example.csv", ("record_label", "time", "p_h0", "p_h1")),
              ("clicks_example.csv", ("record_label", "click_time"))],
    "fig2b": [("qe_curve_mu*.csv", QE_COLS + ("qe_analytic",))],
    "fig2c": [("counts_histogram.csv", ("time", "count", "p_h0", "p_h1"))],
    "fig3a": [("qe_curve_gamma*_pulse.csv", QE_COLS),
              ("qe_curve_gamma*_nopulse.csv", QE_COLS)],
    "fig3b": [("qe_curve_omegaq*.csv", QE_COLS)],
    "fig4a": [("cumulative_counts.csv", ("time", "mean_h0", "mean_h1")),
              ("posterior_example.csv", ("record_label", "time", "p_h0", "p_h1"))],
    "fig4b": [("qe_curve_mu*.csv", QE_COLS)],
    "fig5": [("bell_populations.csv", ("run_id", "time", "p1", "p2", "p3", "p4"))],
    "fig6": [("fidelity_hist.csv", ("eta", "T", "bin_low", "bin_high", "count")),
             ("fidelity_sweep.csv", ("eta", "T", "f", "fraction_at_least"))],
}


class FigureDataError(ValueError):
    """A dataset is missing, empty, or lacks required columns."""


@dataclass(frozen=True)
class FigureSpec:
    figure_id: str
    data_dir: str
    out_path: str

    def __post_init__(self):
        if self.figure_id not in FIGURE_IDS:
            raise ValueError(f"figure_id must be one of {FIGURE_IDS}, got {self.figure_id!r}")

    def resolve_inputs(self) -> dict[str, list[Path]]:
        """Match every required pattern; validate columns and non-emptiness."""
        root = Path(self.data_dir)
        resolved: dict[str, list[Path]] = {}
        for pattern, columns in REQUIREMENTS[self.figure_id]:
            paths = sorted(root.glob(pattern))
            if not paths:
                raise FigureDataError(
                    f"{self.figure_id}: no dataset matching {pattern!r} in {root}")
            for p in paths:
                _check_columns(p, columns)
            resolved[pattern] = paths
        return resolved


def _check_columns(path: Path, required: tuple[str, ...]) -> None:
    with open(path) as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FigureDataError(f"{path.name}: empty dataset") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise FigureDataError(f"{path.name}: missing columns {', '.join(missing)}")
        if next(reader, None) is None:
            raise FigureDataError(f"{path.name}: no data rows")


def read_table(path: Path) -> dict[str, list[str]]:
    with open(path) as f:
        reader = csv.DictReader(f)
        cols: dict[str, list[str]] = {name: [] for name in reader.fieldnames}
        for row in reader:
            for key, val in row.items():
                cols[key].append(val)
    return cols


def floats(table: dict[str, list[str]], column: str):
    import numpy as np
    return np.array([float(v) for v in table[column]])
