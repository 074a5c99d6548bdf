"""CSV and figure emission for aggregated benchmark runs.

CSV files are RFC-4180 with a header row, '.' decimal separator, 12
significant digits, and a leading comment line carrying the config hash.
Figures are SVG line plots rendered with matplotlib next to the CSVs.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .pipeline import AggregateReport, ScoreMatrix
from .util import moving_average

SMOOTH_WINDOW = 20
_FMT = "%.12g"


def _fmt(x) -> str:
    return _FMT % float(x)


def _write_csv(path: Path, comment: str, header, rows):
    buf = io.StringIO(newline="")
    buf.write(f"# {comment}\r\n")
    writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8", newline="")


def score_matrix_csv_path(outdir: Path, matrix: ScoreMatrix) -> Path:
    return (outdir / "matrices" /
            f"{matrix.strategy}_M{matrix.capacity}_seed{matrix.seed}.csv")


def write_score_matrix(outdir: Path, matrix: ScoreMatrix, run_hash: str):
    path = score_matrix_csv_path(outdir, matrix)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ["experience"] + [f"task_{t}" for t in range(matrix.n_tasks)]
    rows = [[r] + [_fmt(v) for v in matrix.scores[r]]
            for r in range(matrix.n_experiences)]
    comment = (f"config_hash = {run_hash}, strategy = {matrix.strategy}, "
               f"M = {matrix.capacity}, seed = {matrix.seed}")
    _write_csv(path, comment, header, rows)
    return path


def read_score_matrix(path: Path) -> ScoreMatrix:
    """Parse back a per-cell CSV (values carry 12 significant digits)."""
    lines = path.read_text(encoding="utf-8").splitlines()
    meta = lines[0].lstrip("# ")
    fields = dict(part.split(" = ") for part in meta.split(", "))
    rows = list(csv.reader(lines[1:]))
    scores = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    return ScoreMatrix(scores, fields["strategy"], int(fields["M"]),
                       int(fields["seed"]))


def _aggregate_table(report: AggregateReport, capacity: int):
    """Table layout: rows = experiences + Avg, columns = strategies."""
    strategies = [s for s in report.config.strategies]
    columns = {}
    for strategy in strategies:
        cell = report.cells.get((strategy, capacity))
        if cell is None:  # Naive/Cumulative are stored once, under max M
            stored = [c for (s, m), c in report.cells.items() if s == strategy]
            cell = stored[0] if stored else None
        columns[strategy] = cell
    present = [s for s in strategies if columns[s] is not None]
    n_exp = report.config.k
    rows = []
    for r in range(n_exp):
        rows.append([f"exp_{r}"] + [_fmt(columns[s].avg_seen[r]) for s in present])
    rows.append(["Avg"] + [_fmt(columns[s].overall_avg) for s in present])
    return ["experience"] + present, rows


def emit_report(report: AggregateReport, outdir) -> list:
    """Write every CSV and SVG for the report; returns the paths written."""
    if not report.cells and not report.matrices:
        raise ValueError("nothing to report: no completed cells")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    run_hash = report.hash
    written = []

    for matrix in report.matrices.values():
        written.append(write_score_matrix(outdir, matrix, run_hash))

    capacities = sorted({m for (_s, m) in report.cells}, reverse=True)
    for capacity in capacities:
        header, rows = _aggregate_table(report, capacity)
        path = outdir / f"aggregate_M{capacity}.csv"
        _write_csv(path, f"config_hash = {run_hash}, M = {capacity}",
                   header, rows)
        written.append(path)

        fpath = outdir / f"forgetting_M{capacity}.csv"
        strategies = [s for (s, m) in report.cells if m == capacity]
        frows = [[s] + [_fmt(v) for v in report.cells[(s, capacity)].forgetting_mean]
                 + [_fmt(report.cells[(s, capacity)].forgetting_mean.mean())]
                 for s in sorted(strategies)]
        _write_csv(fpath, f"config_hash = {run_hash}, M = {capacity}",
                   ["strategy"] + [f"task_{t}" for t in range(report.config.k)] + ["mean"],
                   frows)
        written.append(fpath)

        written.append(_plot_scores(report, capacity, outdir, run_hash))

    if report.experts:
        written.append(_plot_training_curves(report, outdir, run_hash))
    return written


def _finish_svg(fig, path: Path, run_hash: str):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(f"<!-- config_hash = {run_hash} -->\n")
    return path


def _plot_scores(report: AggregateReport, capacity: int, outdir: Path, run_hash: str):
    """Seed-averaged score over seen tasks, per strategy, per experience."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for strategy in report.config.strategies:
        cell = report.cells.get((strategy, capacity))
        if cell is None:
            stored = [c for (s, _m), c in report.cells.items() if s == strategy]
            if not stored:
                continue
            cell = stored[0]
        ax.plot(range(1, cell.avg_seen.size + 1), cell.avg_seen,
                marker="o", label=strategy)
    ax.set_xlabel("experience")
    ax.set_ylabel("avg z-rotation over seen tasks [deg]")
    ax.set_title(f"Score over seen tasks, M = {capacity}")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _finish_svg(fig, outdir / f"scores_M{capacity}.svg", run_hash)


def _plot_training_curves(report: AggregateReport, outdir: Path, run_hash: str):
    """Smoothed per-episode training reward for every trained expert."""
    tasks = sorted({obj for (_seed, obj) in report.experts})
    fig, axes = plt.subplots(1, len(tasks), figsize=(4 * len(tasks), 3.5),
                             squeeze=False)
    for col, obj in enumerate(tasks):
        ax = axes[0][col]
        for (seed, o), artifact in sorted(report.experts.items()):
            if o != obj:
                continue
            rewards = [r.total_reward for r in artifact.training_curve]
            if not rewards:
                continue
            ax.plot(moving_average(rewards, SMOOTH_WINDOW), lw=0.8,
                    label=f"seed {seed}")
        ax.set_title(f"task {obj}")
        ax.set_xlabel("episode")
        if col == 0:
            ax.set_ylabel(f"episode reward (window {SMOOTH_WINDOW})")
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize=7)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _finish_svg(fig, outdir / "training_curves.svg", run_hash)
