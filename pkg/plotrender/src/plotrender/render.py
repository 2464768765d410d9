"""Log-log convergence figures from solver CSV output.

One series per input file, or one per distinct value of a grouping column.
Slope triangles are drawn from user-specified slopes (they annotate, they do
not fit).  SVG output is byte-deterministic for a fixed spec.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["PlotSpec", "SlopeTriangle", "PlotError", "load_series", "render"]

_MARKERS = ("o", "s", "^", "D", "v", "p", "*")


class PlotError(RuntimeError):
    """Raised for malformed input: empty CSV or missing columns."""


@dataclass(frozen=True)
class SlopeTriangle:
    """Annotation triangle with the given slope, anchored in axes fraction
    coordinates; ``size`` is the horizontal extent in axes fraction."""

    slope: float
    x: float = 0.6
    y: float = 0.25
    size: float = 0.18


@dataclass
class PlotSpec:
    """Everything needed to draw one figure."""

    csv_paths: Sequence[str]
    x_column: str = "h"
    y_column: str = "err_l2h1"
    group_by: Optional[str] = None
    labels: Sequence[str] = ()
    triangles: Sequence[SlopeTriangle] = field(default_factory=tuple)
    title: str = ""
    x_label: str = ""
    y_label: str = ""
    output: str = "plot.png"

    def __post_init__(self):
        if not self.csv_paths:
            raise PlotError("at least one CSV path is required")


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        columns = reader.fieldnames
    if not rows:
        raise PlotError(f"{path}: no data rows")
    return columns, rows


def _column(rows, name, path):
    try:
        return [float(r[name]) for r in rows]
    except KeyError:
        raise PlotError(f"{path}: missing column {name!r}") from None
    except ValueError as exc:
        raise PlotError(f"{path}: non-numeric value in column {name!r}: {exc}") from None


def load_series(spec: PlotSpec):
    """(label, xs, ys) triples for every series requested by the spec."""
    series = []
    for i, path in enumerate(spec.csv_paths):
        columns, rows = _read_rows(path)
        for col in (spec.x_column, spec.y_column):
            if col not in columns:
                raise PlotError(f"{path}: missing column {col!r}")
        base = spec.labels[i] if i < len(spec.labels) else Path(path).stem
        if spec.group_by is None:
            series.append((base, _column(rows, spec.x_column, path),
                           _column(rows, spec.y_column, path)))
            continue
        if spec.group_by not in columns:
            raise PlotError(f"{path}: missing column {spec.group_by!r}")
        seen = []
        for row in rows:
            if row[spec.group_by] not in seen:
                seen.append(row[spec.group_by])
        for value in seen:
            group = [r for r in rows if r[spec.group_by] == value]
            label = f"{spec.group_by}={value}"
            if len(spec.csv_paths) > 1:
                label = f"{base}, {label}"
            series.append((label, _column(group, spec.x_column, path),
                           _column(group, spec.y_column, path)))
    return series


def _draw_triangle(ax, tri: SlopeTriangle):
    """Right triangle whose hypotenuse has the requested log-log slope."""
    x0, x1 = ax.get_xlim()
    y0, y1 = ax.get_ylim()
    import math

    lx0, lx1 = math.log10(x0), math.log10(x1)
    ly0, ly1 = math.log10(y0), math.log10(y1)
    ax_w = lx1 - lx0
    ax_h = ly1 - ly0
    ax0 = lx0 + tri.x * ax_w
    ay0 = ly0 + tri.y * ax_h
    dx = tri.size * ax_w
    dy = tri.slope * dx
    xs = [10**ax0, 10 ** (ax0 + dx), 10 ** (ax0 + dx)]
    ys = [10**ay0, 10**ay0, 10 ** (ay0 + dy)]
    ax.fill(xs + [xs[0]], ys + [ys[0]], facecolor="none", edgecolor="black", linewidth=0.8)
    ax.text(10 ** (ax0 + dx * 0.5), 10 ** (ay0 - 0.03 * ax_h), "1",
            ha="center", va="top", fontsize=9)
    ax.text(10 ** (ax0 + dx + 0.01 * ax_w), 10 ** (ay0 + dy * 0.5),
            f"{tri.slope:g}", ha="left", va="center", fontsize=9)


def render(spec: PlotSpec) -> str:
    """Draw the figure and write it to ``spec.output``; returns the path."""
    series = load_series(spec)

    # fixed salt, real text elements and scrubbed metadata make SVG output
    # reproducible and inspectable
    plt.rcParams["svg.hashsalt"] = "plotrender"
    plt.rcParams["svg.fonttype"] = "none"
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    for i, (label, xs, ys) in enumerate(series):
        ax.loglog(xs, ys, marker=_MARKERS[i % len(_MARKERS)], label=label)
    ax.set_xlabel(spec.x_label or spec.x_column)
    ax.set_ylabel(spec.y_label or spec.y_column)
    if spec.title:
        ax.set_title(spec.title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()

    # triangles annotate a known slope; pointless under a single data point
    if all(len(xs) > 1 for _, xs, _ in series):
        for tri in spec.triangles:
            _draw_triangle(ax, tri)

    fig.tight_layout()
    out_dir = os.path.dirname(os.path.abspath(spec.output))
    os.makedirs(out_dir, exist_ok=True)
    fig.savefig(spec.output, metadata=_clean_metadata(spec.output))
    plt.close(fig)
    return spec.output


def _clean_metadata(output):
    ext = os.path.splitext(output)[1].lower()
    if ext == ".svg":
        return {"Date": None}
    if ext == ".png":
        return {"Software": None}
    return None
