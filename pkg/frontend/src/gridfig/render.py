"""Render splitalloc CSV outputs into figures.

Two plot kinds:

* ``heatmap`` -- the (gamma, w) sweep CSV (columns gamma, w, mean_mse, ...):
  score-window width on the horizontal axis, subsampling rate on the
  vertical axis, darker cells = smaller error.
* ``lines``  -- diagnostic curves such as the exponential-moment series
  (columns n, estimate, se) or any x/y/err triple chosen by flag.

Figures are deterministic: fixed size and dpi, no timestamps or software
metadata in the PNG, and the color scale taken from the data unless pinned
via --vmin/--vmax.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["PlotJob", "SchemaError", "read_rows", "pivot_heatmap", "build_figure", "render", "main"]


class SchemaError(ValueError):
    """The input CSV lacks a column the plot kind requires."""


@dataclass
class PlotJob:
    input_csv: str
    kind: str  # "heatmap" | "lines"
    output: str
    x_col: str = "n"
    y_col: str = "estimate"
    err_col: str | None = "se"
    value_col: str = "mean_mse"
    vmin: float | None = None
    vmax: float | None = None
    title: str | None = None
    log_y: bool = False

    def __post_init__(self):
        if self.kind not in ("heatmap", "lines"):
            raise ValueError(f"unknown plot kind {self.kind!r}")


def _parse_cell(text: str) -> float:
    if text in ("inf", "Inf", "INF"):
        return math.inf
    return float(text)


def read_rows(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file, expected a CSV header row")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def _require(rows: list[dict], columns) -> None:
    missing = [c for c in columns if c not in rows[0]]
    if missing:
        raise SchemaError(
            f"missing column(s) {missing}; found {sorted(rows[0])}"
        )


def pivot_heatmap(rows: list[dict], value_col: str = "mean_mse"):
    """CSV rows -> (sorted gammas, sorted ws, value matrix[gamma, w])."""
    _require(rows, ["gamma", "w", value_col])
    gammas = sorted({_parse_cell(r["gamma"]) for r in rows})
    ws = sorted({_parse_cell(r["w"]) for r in rows})
    matrix = np.full((len(gammas), len(ws)), np.nan)
    for r in rows:
        gi = gammas.index(_parse_cell(r["gamma"]))
        wi = ws.index(_parse_cell(r["w"]))
        matrix[gi, wi] = float(r[value_col])
    if np.isnan(matrix).any():
        raise SchemaError("grid is not complete: some (gamma, w) cells are missing")
    return gammas, ws, matrix


def _w_labels(ws) -> list[str]:
    return ["inf" if math.isinf(w) else f"{w:g}" for w in ws]


def build_figure(job: PlotJob):
    rows = read_rows(job.input_csv)
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    if job.kind == "heatmap":
        gammas, ws, matrix = pivot_heatmap(rows, job.value_col)
        image = ax.imshow(
            matrix,
            origin="lower",
            aspect="auto",
            cmap="viridis_r",  # darker = smaller error
            vmin=job.vmin,
            vmax=job.vmax,
        )
        ax.set_xticks(range(len(ws)), _w_labels(ws))
        ax.set_yticks(range(len(gammas)), [f"{g:g}" for g in gammas])
        ax.set_xlabel("w")
        ax.set_ylabel("gamma")
        fig.colorbar(image, ax=ax, label=job.value_col)
    else:
        _require(rows, [job.x_col, job.y_col])
        groups: dict[str, list[dict]] = {}
        for r in rows:
            groups.setdefault(r.get("policy", ""), []).append(r)
        for label, grp in sorted(groups.items()):
            x = np.array([_parse_cell(r[job.x_col]) for r in grp])
            y = np.array([float(r[job.y_col]) for r in grp])
            order = np.argsort(x)
            err = None
            if job.err_col and job.err_col in grp[0]:
                err = np.array([float(r[job.err_col]) for r in grp])[order]
            ax.errorbar(x[order], y[order], yerr=err, marker="o", capsize=2, label=label or None)
        if len(groups) > 1:
            ax.legend()
        if job.log_y:
            ax.set_yscale("log")
        ax.set_xlabel(job.x_col)
        ax.set_ylabel(job.y_col)
    if job.title:
        ax.set_title(job.title)
    fig.tight_layout()
    return fig


def render(job: PlotJob) -> str:
    """Write the figure; returns the output path."""
    fig = build_figure(job)
    # strip the software tag so identical inputs give identical bytes
    fig.savefig(job.output, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return job.output


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="render", description=__doc__)
    ap.add_argument("--in", dest="input_csv", required=True)
    ap.add_argument("--kind", choices=["heatmap", "lines"], required=True)
    ap.add_argument("--out", dest="output", required=True)
    ap.add_argument("--value-col", default="mean_mse")
    ap.add_argument("--x", dest="x_col", default="n")
    ap.add_argument("--y", dest="y_col", default="estimate")
    ap.add_argument("--yerr", dest="err_col", default="se")
    ap.add_argument("--vmin", type=float, default=None)
    ap.add_argument("--vmax", type=float, default=None)
    ap.add_argument("--title", default=None)
    ap.add_argument("--log-y", action="store_true")
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    job = PlotJob(
        input_csv=args.input_csv,
        kind=args.kind,
        output=args.output,
        value_col=args.value_col,
        x_col=args.x_col,
        y_col=args.y_col,
        err_col=args.err_col,
        vmin=args.vmin,
        vmax=args.vmax,
        title=args.title,
        log_y=args.log_y,
    )
    try:
        render(job)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
