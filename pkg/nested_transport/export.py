"""CSV and SVG output for reports, tessellations, certificates and error curves.

CSV files are UTF-8 with a header row; label CSVs carry 1-based labels.
SVG drawings place x2 upwards, so grid row 0 is drawn at the bottom.
"""

import logging
import math
import os
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
import svgwrite

from nested_transport.constants import SVG_PALETTE
from nested_transport.laguerre import Tessellation
from nested_transport.schemas import NestCertificate, SolveReport

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["problem", "method", "N", "C", "time", "iterations", "damping_steps", "status",
                  "residual", "nested", "message"]
INFEASIBLE = "INFEASIBLE"


def _ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _number(value: Optional[float], fmt: str = "{:.10g}") -> str:
    if value is None or not math.isfinite(value):
        return "NAN"
    return fmt.format(value)


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def reports_to_frame(reports: Iterable[SolveReport], record_timing: bool = True) -> pd.DataFrame:
    """One row per report; every cell is filled (NAN / UNKNOWN / - for missing values)."""
    rows = []
    for r in reports:
        rows.append({
            "problem": r.problem,
            "method": r.method,
            "N": r.n,
            "C": _number(r.C),
            "time": _number(r.wall_time if record_timing else 0.0, "{:.4f}"),
            "iterations": r.iterations,
            "damping_steps": r.damping_steps,
            "status": r.status.value,
            "residual": _number(r.residual_norm, "{:.3e}"),
            "nested": "UNKNOWN" if r.nested is None else str(r.nested).upper(),
            "message": r.message or "-",
        })
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def write_reports_csv(reports: Iterable[SolveReport], path: str, record_timing: bool = True) -> pd.DataFrame:
    frame = reports_to_frame(reports, record_timing)
    frame_to_csv(frame, path)
    logger.info(f"[export] {len(frame)} report rows -> {path}")
    return frame


def labels_to_csv(tessellation: Tessellation, path: str) -> pd.DataFrame:
    """row, col, label per grid cell with labels written 1-based."""
    m = tessellation.grid.resolution
    rows, cols = np.divmod(np.arange(m * m), m)
    frame = pd.DataFrame({"row": rows, "col": cols, "label": tessellation.labels + 1})
    frame_to_csv(frame, path)
    return frame


def labels_from_csv(path: str) -> np.ndarray:
    """Zero-based label vector in row-major order."""
    frame = pd.read_csv(path)
    missing = {"row", "col", "label"} - set(frame.columns)
    if missing:
        raise ValueError(f"Label CSV {path} lacks columns {sorted(missing)}")
    m = int(frame["row"].max()) + 1
    if len(frame) != m * m:
        raise ValueError(f"Label CSV {path} has {len(frame)} rows, expected {m * m}")
    order = np.lexsort((frame["col"].to_numpy(), frame["row"].to_numpy()))
    return frame["label"].to_numpy(dtype=np.int64)[order] - 1


def certificate_to_frame(certificate: NestCertificate) -> pd.DataFrame:
    columns = ["index", "sup_d_min", "lower_bound", "coarse_lower_bound", "margin", "verdict", "sampled"]
    return pd.DataFrame([r.model_dump() for r in certificate.records], columns=columns)


def error_curve_to_frame(evaluations: Sequence, n: int) -> pd.DataFrame:
    """C, Error (or INFEASIBLE) and the constructed masses nu_1..nu_N per sampled C."""
    rows = []
    for ev in evaluations:
        row = {"C": f"{ev.C:.10g}", "error": f"{ev.value:.10g}" if ev.feasible else INFEASIBLE}
        masses = np.asarray(ev.masses, dtype=float)
        for i in range(n):
            row[f"nu_{i + 1}"] = f"{masses[i]:.10g}" if i < masses.size else "NAN"
        rows.append(row)
    return pd.DataFrame(rows, columns=["C", "error"] + [f"nu_{i + 1}" for i in range(n)])


# ---------------------------------------------------------------------------
# Drawings
# ---------------------------------------------------------------------------

def _colour(label: int) -> str:
    return SVG_PALETTE[int(label) % len(SVG_PALETTE)]


def _draw_tessellation(dwg: svgwrite.Drawing, tessellation: Tessellation, offset: float, size: float,
                       title: Optional[str] = None):
    grid = tessellation.label_grid()
    m = grid.shape[0]
    cell = size / m
    x0, y0, x1, y1 = tessellation.grid.bounds
    group = dwg.g(id=f"tessellation-{int(offset)}")
    for row in range(m):
        labels = grid[row]
        # Runs of equal labels along the row share one rectangle.
        breaks = np.flatnonzero(np.diff(labels)) + 1
        starts = np.concatenate([[0], breaks])
        ends = np.concatenate([breaks, [m]])
        y = (m - 1 - row) * cell
        for a, b in zip(starts, ends):
            group.add(dwg.rect(insert=(offset + a * cell, y), size=((b - a) * cell, cell),
                               fill=_colour(labels[a]), stroke="none"))
    emb = tessellation.targets.embedding
    for px, py in emb:
        if x0 <= px <= x1 and y0 <= py <= y1:
            cx = offset + (px - x0) / (x1 - x0) * size
            cy = (y1 - py) / (y1 - y0) * size
            group.add(dwg.circle(center=(cx, cy), r=max(2.0, size / 160), fill="black"))
    if title:
        group.add(dwg.text(title, insert=(offset + 4, size + 16), font_size="12px", fill="black"))
    dwg.add(group)


def tessellation_svg(tessellation: Tessellation, path: str, size: int = 512, title: Optional[str] = None) -> str:
    """Filled grid cells coloured by label with the targets as black dots."""
    _ensure_parent(path)
    dwg = svgwrite.Drawing(path, size=(size, size + (24 if title else 0)), profile="full")
    _draw_tessellation(dwg, tessellation, 0.0, float(size), title)
    dwg.save()
    logger.info(f"[export] tessellation N={tessellation.n} -> {path}")
    return path


def hedonic_pair_svg(side1: Tessellation, side2: Tessellation, path: str, size: int = 384) -> str:
    """Both hedonic tessellations side by side."""
    _ensure_parent(path)
    gap = 16
    dwg = svgwrite.Drawing(path, size=(2 * size + gap, size + 24), profile="full")
    _draw_tessellation(dwg, side1, 0.0, float(size), "mu_1 with v")
    _draw_tessellation(dwg, side2, float(size + gap), float(size), "mu_2 with C - v")
    dwg.save()
    logger.info(f"[export] hedonic pair N={side1.n} -> {path}")
    return path


def error_curve_svg(evaluations: Sequence, path: str, width: int = 640, height: int = 400) -> str:
    """Polyline of Error(C) over the feasible samples; infeasible C marked on the axis."""
    feasible = [(ev.C, ev.value) for ev in evaluations if ev.feasible]
    infeasible = [ev.C for ev in evaluations if not ev.feasible]
    cs = [ev.C for ev in evaluations]
    if not cs:
        raise ValueError("Error curve needs at least one sampled C")
    c_lo, c_hi = min(cs), max(cs)
    values = [e for _, e in feasible] or [0.0]
    e_lo, e_hi = min(min(values), 0.0), max(max(values), 0.0)
    if c_hi == c_lo:
        c_hi = c_lo + 1.0
    if e_hi == e_lo:
        e_hi = e_lo + 1.0
    pad = 32

    def to_px(c, e):
        x = pad + (c - c_lo) / (c_hi - c_lo) * (width - 2 * pad)
        y = height - pad - (e - e_lo) / (e_hi - e_lo) * (height - 2 * pad)
        return x, y

    _ensure_parent(path)
    dwg = svgwrite.Drawing(path, size=(width, height), profile="full")
    dwg.add(dwg.line(start=to_px(c_lo, 0.0), end=to_px(c_hi, 0.0), stroke="gray", stroke_width=1))
    if feasible:
        dwg.add(dwg.polyline([to_px(c, e) for c, e in feasible], stroke="#1f77b4", fill="none",
                             stroke_width=2))
    for c in infeasible:
        dwg.add(dwg.circle(center=to_px(c, 0.0), r=2, fill="#d62728"))
    dwg.add(dwg.text(f"C in [{c_lo:.3g}, {c_hi:.3g}]", insert=(pad, height - 8), font_size="12px"))
    dwg.add(dwg.text(f"Error in [{e_lo:.3g}, {e_hi:.3g}]", insert=(pad, 16), font_size="12px"))
    dwg.save()
    logger.info(f"[export] error curve ({len(feasible)} feasible, {len(infeasible)} infeasible) -> {path}")
    return path


def frame_to_csv(frame: pd.DataFrame, path: str) -> str:
    _ensure_parent(path)
    frame.to_csv(path, index=False, encoding="utf-8")
    return path

