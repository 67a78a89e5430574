"""Render run-record CSV files into figures.

Input files follow the runner's schemas: ``loss_history.csv``
(iteration, loss[, loss_u, loss_T][, loss_memory, loss_analytic]),
``error_history.csv`` (iteration, rel_error_pct[, ...]), and prediction
tables (x[, y], u_net, u_exact).  Missing optional columns degrade to
fewer curves; inputs are never modified.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["read_table", "render", "PLOT_KINDS"]

PLOT_KINDS = ("loss", "prediction", "error", "surface2d")

_LOSS_STYLES = {
    "loss": dict(color="tab:blue", lw=1.2, label="loss"),
    "loss_u": dict(color="tab:blue", lw=1.2, label="trial loss"),
    "loss_T": dict(color="tab:purple", lw=1.0, label="test-fit loss"),
    "loss_memory": dict(color="tab:red", lw=1.2, label="memory loss"),
    "loss_analytic": dict(color="black", lw=0.8, label="analytic objective"),
    "energy_error": dict(color="tab:red", lw=1.0, ls="--", label="energy error"),
}


class SchemaError(ValueError):
    """The CSV does not carry the columns the plot kind needs."""


def read_table(path: str) -> dict:
    """Column name -> float array; descriptive failure on malformed files."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [row for row in reader if row]
    except (OSError, StopIteration) as exc:
        raise SchemaError(f"cannot read table {path}: {exc}") from exc
    try:
        data = np.array([[float(v) for v in row] for row in rows])
    except ValueError as exc:
        raise SchemaError(f"non-numeric cell in {path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise SchemaError(f"ragged table in {path}")
    return {name.strip(): data[:, k] for k, name in enumerate(header)}


def _plot_loss(ax, tables, reference):
    curves = 0
    for table in tables:
        if "iteration" not in table:
            raise SchemaError("loss plot needs an iteration column")
        it = table["iteration"]
        for name, series in table.items():
            if name == "iteration" or name.startswith("grad"):
                continue
            style = _LOSS_STYLES.get(name, dict(lw=1.0, label=name))
            ax.plot(it, series, **style)
            curves += 1
    if curves == 0:
        raise SchemaError("no loss columns found")
    positive = all(
        np.all(t[c] > 0.0)
        for t in tables for c in t
        if c != "iteration" and not c.startswith("grad")
    ) and (reference is None or reference > 0)
    if positive:
        ax.set_yscale("log")
    if reference is not None:
        ax.axhline(reference, color="red", ls="--", lw=0.8,
                   label=f"reference {reference:g}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(loc="best", fontsize=8)


def _plot_prediction(ax, tables, reference):
    table = tables[0]
    value_cols = [c for c in table
                  if c == "u_net" or c.startswith(("u_pred", "u_FEM"))]
    if "x" not in table or not value_cols:
        raise SchemaError("prediction plot needs x and a solution column")
    x = table["x"]
    if "u_exact" in table:
        ax.plot(x, table["u_exact"], color="lightcoral", lw=3.0, label="exact")
    marker_step = max(1, x.size // 40)
    for name in value_cols:
        if name.startswith("u_FEM"):
            ax.plot(x, table[name], lw=1.5, alpha=0.5, label=name)
        else:
            ax.plot(x, table[name], ls="--", lw=0.9, marker="*",
                    markevery=marker_step,
                    label="network" if name == "u_net" else name)
    ax.set_xlabel("x")
    ax.set_ylabel("u(x)")
    ax.legend(loc="best", fontsize=8)


def _plot_error(ax, tables, reference):
    table = tables[0]
    if "iteration" not in table:
        raise SchemaError("error plot needs an iteration column")
    it = table["iteration"]
    plotted = 0
    for name, series in table.items():
        if name == "iteration":
            continue
        ax.plot(it, series, lw=1.2, label=name)
        plotted += 1
    if not plotted:
        raise SchemaError("no error columns found")
    if all(np.all(table[c] > 0) for c in table if c != "iteration"):
        ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("relative error (%)")
    ax.legend(loc="best", fontsize=8)


def _plot_surface2d(ax, tables, reference):
    table = tables[0]
    for needed in ("x", "y"):
        if needed not in table:
            raise SchemaError("surface plot needs x and y columns")
    field = next((c for c in ("u_net", "u_exact") if c in table), None)
    if field is None:
        raise SchemaError("surface plot needs a u_net or u_exact column")
    sc = ax.scatter(table["x"], table["y"], c=table[field], s=12, cmap="viridis")
    ax.figure.colorbar(sc, ax=ax, label=field)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_aspect("equal")


_RENDERERS = {
    "loss": _plot_loss,
    "prediction": _plot_prediction,
    "error": _plot_error,
    "surface2d": _plot_surface2d,
}


def render(kind: str, csv_paths, out_path: str, reference: float | None = None) -> str:
    """Render one figure of the given kind from the CSV inputs."""
    if kind not in _RENDERERS:
        raise SchemaError(f"unknown plot kind {kind!r} (use {', '.join(PLOT_KINDS)})")
    if not csv_paths:
        raise SchemaError("no input tables given")
    tables = [read_table(p) for p in csv_paths]
    fig, ax = plt.subplots(figsize=(6.4, 3.6), dpi=120)
    try:
        _RENDERERS[kind](ax, tables, reference)
        fig.tight_layout()
        fig.savefig(out_path)
    finally:
        plt.close(fig)
    if not os.path.getsize(out_path):
        raise SchemaError(f"empty image written to {out_path}")
    return out_path
