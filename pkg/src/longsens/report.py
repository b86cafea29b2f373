"""Delimited output and figure rendering for the command-line reports.

CSV cells are formatted with a fixed 12-significant-digit rule so the same
scenario and seed always produce byte-identical files.  Non-values are
explicit empty cells; every populated numeric cell is finite.  Figures are
rendered headlessly to PNG files next to the delimited output.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

__all__ = [
    "fmt_cell",
    "render_csv",
    "render_json",
    "write_text",
    "figure_path",
    "render_compare_figure",
    "render_sensitivity_figure",
    "render_decompose_figure",
]


def fmt_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    v = float(value)
    if not math.isfinite(v):
        return ""
    return f"{v:.12g}"


def render_csv(columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt_cell(row.get(col)) for col in columns])
    return buf.getvalue()


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def render_json(columns: list[str], rows: list[dict], summary: dict | None = None) -> str:
    payload = {"rows": [{c: _jsonable(r.get(c)) for c in columns} for r in rows]}
    if summary is not None:
        payload["summary"] = {k: _jsonable(v) for k, v in summary.items()}
    return json.dumps(payload, indent=2) + "\n"


def write_text(path, text: str) -> None:
    Path(path).write_text(text)


def figure_path(out_path) -> Path:
    return Path(out_path).with_suffix(".png")


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_compare_figure(nu_rows: list[dict], mu_rows: list[dict],
                          families: list[str], path) -> None:
    """Two panels of d lambda / d nu curves: against nu and against the
    drift-level sweep."""
    plt = _pyplot()
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
    for ax, rows, xlabel in ((axes[0], nu_rows, "risk tolerance exponent"),
                             (axes[1], mu_rows, "drift level")):
        for fam in families:
            pts = [(r["value"], r[fam]) for r in rows if r.get(fam) is not None]
            if pts:
                xs, ys = zip(*pts)
                ax.plot(xs, ys, label=fam)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("eigenvalue sensitivity")
        ax.grid(True, alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_sensitivity_figure(rows: list[dict], path) -> None:
    plt = _pyplot()
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
    ts = [r["T"] for r in rows]
    axes[0].plot(ts, [r["value"] for r in rows], "o-", label="(1/T) d ln p_T / d nu")
    axes[0].plot(ts, [r["target"] for r in rows], "--", label="asymptote")
    axes[0].set_xlabel("horizon T")
    axes[0].legend(fontsize=8)
    axes[1].plot(ts, [r["residual_times_T"] for r in rows], "s-")
    axes[1].set_xlabel("horizon T")
    axes[1].set_ylabel("residual * T")
    axes[1].set_ylim(bottom=0.0)
    for ax in axes:
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_decompose_figure(rows: list[dict], path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ts = [r["T"] for r in rows]
    ax.errorbar(ts, [r["p_T_mc"] for r in rows],
                yerr=[3 * r["p_T_mc_se"] for r in rows],
                fmt="o", capsize=3, label="Monte Carlo (3 s.e.)")
    ax.plot(ts, [r["p_T_assembled"] for r in rows], "x--", label="assembled")
    ax.set_xlabel("horizon T")
    ax.set_ylabel("p_T")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
