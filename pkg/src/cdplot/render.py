"""Deterministic SVG rendering and delimited export of curve sets.

The SVG output is plain SVG 1.1 assembled from strings: same input,
same bytes, no timestamps or generated ids. Individual unit curves are
drawn first as thin translucent polylines, the mean last as a thick
opaque one; axes and ticks use line elements so a curve set with m
units always contains exactly m + 1 polylines.

CSV schema (UTF-8, LF, '.' decimal, 17 significant digits)::

    plot_kind,unit,grid_value,value

unit is a 0-based integer or the literal "mean"; band files use the
model index plus the literals "lower" and "upper". Rows are ordered by
(unit, grid_value) with the named rows after the numbered ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import BandSet, CurveSet, EngineError, Grid

__all__ = [
    "KIND_COLORS",
    "PlotStyle",
    "export_band_csv",
    "export_csv",
    "import_csv",
    "render_band",
    "render_curves",
]

KIND_COLORS = {
    "ICE": "#d62728",
    "PDP": "#d62728",
    "TDP": "#1f77b4",
    "NDDP": "#2ca02c",
    "NIDP": "#ff7f0e",
    "PCDP": "#9467bd",
}

_BAND_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


@dataclass(frozen=True)
class PlotStyle:
    width: int = 640
    height: int = 480
    margin: int = 50
    curve_width: float = 1.0
    curve_opacity: float = 0.25
    mean_width: float = 2.5
    colors: dict[str, str] = field(default_factory=lambda: dict(KIND_COLORS))
    x_label: str | None = None
    y_label: str = "prediction"
    grid_lines: bool = True

    def __post_init__(self) -> None:
        if self.width <= 2 * self.margin or self.height <= 2 * self.margin:
            raise EngineError("canvas too small for margins")
        if not 0.0 < self.curve_opacity <= 1.0:
            raise EngineError("curve opacity must be in (0, 1]")


def _fmt17(value: float) -> str:
    return format(float(value), ".17g")


def _coord(value: float) -> str:
    return format(value, ".2f")


def _pad_range(lo: float, hi: float) -> tuple[float, float]:
    if lo == hi:
        return lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    """Around `target` ticks at 1/2/5 x 10^k multiples inside [lo, hi]."""
    span = hi - lo
    raw = span / max(target - 1, 1)
    power = math.floor(math.log10(raw))
    best = None
    for mantissa in (1.0, 2.0, 5.0, 10.0):
        step = mantissa * 10.0**power
        count = math.floor(hi / step) - math.ceil(lo / step) + 1
        if best is None or abs(count - target) < best[0]:
            best = (abs(count - target), step)
    step = best[1]
    first = math.ceil(lo / step - 1e-9)
    last = math.floor(hi / step + 1e-9)
    return [round(i * step, 12) for i in range(first, last + 1)]


def _tick_label(value: float) -> str:
    return format(value, "g")


class _Frame:
    """Maps data coordinates onto the pixel canvas."""

    def __init__(self, style, x_lo, x_hi, y_lo, y_hi):
        self.style = style
        self.x_lo, self.x_hi = _pad_range(x_lo, x_hi)
        self.y_lo, self.y_hi = _pad_range(y_lo, y_hi)
        self.left = style.margin
        self.right = style.width - style.margin
        self.top = style.margin
        self.bottom = style.height - style.margin

    def sx(self, value: float) -> float:
        frac = (value - self.x_lo) / (self.x_hi - self.x_lo)
        return self.left + frac * (self.right - self.left)

    def sy(self, value: float) -> float:
        frac = (value - self.y_lo) / (self.y_hi - self.y_lo)
        return self.bottom - frac * (self.bottom - self.top)

    def polyline_points(self, xs, ys) -> str:
        return " ".join(
            f"{_coord(self.sx(float(x)))},{_coord(self.sy(float(y)))}"
            for x, y in zip(xs, ys)
        )


def _open_svg(style: PlotStyle) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{style.width}" height="{style.height}" '
        f'viewBox="0 0 {style.width} {style.height}">',
        f'<rect x="0" y="0" width="{style.width}" height="{style.height}" '
        f'fill="#ffffff"/>',
    ]


def _axes(frame: _Frame, style: PlotStyle, x_label: str) -> list[str]:
    parts = []
    x_ticks = _nice_ticks(frame.x_lo, frame.x_hi)
    y_ticks = _nice_ticks(frame.y_lo, frame.y_hi)
    if style.grid_lines:
        for t in x_ticks:
            x = _coord(frame.sx(t))
            parts.append(
                f'<line x1="{x}" y1="{frame.top}" x2="{x}" y2="{frame.bottom}" '
                f'stroke="#dddddd" stroke-width="0.5"/>'
            )
        for t in y_ticks:
            y = _coord(frame.sy(t))
            parts.append(
                f'<line x1="{frame.left}" y1="{y}" x2="{frame.right}" y2="{y}" '
                f'stroke="#dddddd" stroke-width="0.5"/>'
            )
    parts.append(
        f'<line x1="{frame.left}" y1="{frame.bottom}" x2="{frame.right}" '
        f'y2="{frame.bottom}" stroke="#000000" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{frame.left}" y1="{frame.top}" x2="{frame.left}" '
        f'y2="{frame.bottom}" stroke="#000000" stroke-width="1"/>'
    )
    for t in x_ticks:
        x = _coord(frame.sx(t))
        parts.append(
            f'<line x1="{x}" y1="{frame.bottom}" x2="{x}" '
            f'y2="{frame.bottom + 5}" stroke="#000000" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{x}" y="{frame.bottom + 18}" font-size="11" '
            f'font-family="sans-serif" text-anchor="middle">{_tick_label(t)}</text>'
        )
    for t in y_ticks:
        y = _coord(frame.sy(t))
        parts.append(
            f'<line x1="{frame.left - 5}" y1="{y}" x2="{frame.left}" y2="{y}" '
            f'stroke="#000000" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{frame.left - 8}" y="{y}" font-size="11" '
            f'font-family="sans-serif" text-anchor="end" '
            f'dominant-baseline="middle">{_tick_label(t)}</text>'
        )
    parts.append(
        f'<text x="{_coord((frame.left + frame.right) / 2)}" '
        f'y="{frame.bottom + 35}" font-size="13" font-family="sans-serif" '
        f'text-anchor="middle">{_escape(x_label)}</text>'
    )
    parts.append(
        f'<text x="15" y="{_coord((frame.top + frame.bottom) / 2)}" '
        f'font-size="13" font-family="sans-serif" text-anchor="middle" '
        f'transform="rotate(-90 15 {_coord((frame.top + frame.bottom) / 2)})">'
        f"{_escape(frame.style.y_label)}</text>"
    )
    return parts


def _escape(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    )


def render_curves(curve_set: CurveSet, style: PlotStyle | None = None) -> str:
    """SVG with one thin polyline per unit and a thick mean polyline."""
    style = style or PlotStyle()
    color = style.colors.get(curve_set.kind, "#333333")
    xs = curve_set.grid.values
    y_lo = float(min(curve_set.curves.min(), curve_set.mean.min()))
    y_hi = float(max(curve_set.curves.max(), curve_set.mean.max()))
    frame = _Frame(style, float(xs[0]), float(xs[-1]), y_lo, y_hi)
    parts = _open_svg(style)
    caption = curve_set.kind
    intervention = curve_set.metadata.get("intervention")
    if intervention:
        caption = f"{caption}: {intervention}"
    parts.append(
        f'<text x="{_coord(style.width / 2)}" y="{style.margin - 15}" '
        f'font-size="14" font-family="sans-serif" text-anchor="middle">'
        f"{_escape(caption)}</text>"
    )
    parts.extend(_axes(frame, style, style.x_label or curve_set.grid.var))
    for row in curve_set.curves:
        parts.append(
            f'<polyline fill="none" stroke="{color}" '
            f'stroke-width="{style.curve_width}" '
            f'stroke-opacity="{style.curve_opacity}" '
            f'points="{frame.polyline_points(xs, row)}"/>'
        )
    parts.append(
        f'<polyline fill="none" stroke="{color}" '
        f'stroke-width="{style.mean_width}" '
        f'points="{frame.polyline_points(xs, curve_set.mean)}"/>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_band(band: BandSet, style: PlotStyle | None = None) -> str:
    """SVG with a shaded envelope polygon and one polyline per model."""
    style = style or PlotStyle()
    xs = band.grid.values
    y_lo = float(band.lower.min())
    y_hi = float(band.upper.max())
    frame = _Frame(style, float(xs[0]), float(xs[-1]), y_lo, y_hi)
    parts = _open_svg(style)
    parts.append(
        f'<text x="{_coord(style.width / 2)}" y="{style.margin - 15}" '
        f'font-size="14" font-family="sans-serif" text-anchor="middle">'
        f"{_escape(band.kind + ' model uncertainty')}</text>"
    )
    parts.extend(_axes(frame, style, style.x_label or band.grid.var))
    forward = frame.polyline_points(xs, band.upper)
    backward = frame.polyline_points(xs[::-1], band.lower[::-1])
    parts.append(
        f'<polygon fill="#9ecae1" fill-opacity="0.45" stroke="none" '
        f'points="{forward} {backward}"/>'
    )
    for i, label in enumerate(band.labels):
        color = _BAND_PALETTE[i % len(_BAND_PALETTE)]
        parts.append(
            f'<polyline fill="none" stroke="{color}" '
            f'stroke-width="{style.mean_width}" '
            f'points="{frame.polyline_points(xs, band.curves[i])}"/>'
        )
    for i, label in enumerate(band.labels):
        color = _BAND_PALETTE[i % len(_BAND_PALETTE)]
        y = style.margin + 16 + 16 * i
        parts.append(
            f'<line x1="{frame.right - 120}" y1="{y}" x2="{frame.right - 100}" '
            f'y2="{y}" stroke="{color}" stroke-width="{style.mean_width}"/>'
        )
        parts.append(
            f'<text x="{frame.right - 94}" y="{y + 4}" font-size="11" '
            f'font-family="sans-serif">{_escape(label)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# --- delimited export ------------------------------------------------------


def export_csv(curve_set: CurveSet) -> str:
    """Stable delimited form of a curve set; see the module docstring."""
    lines = ["plot_kind,unit,grid_value,value"]
    for unit in range(curve_set.units):
        for gi, x in enumerate(curve_set.grid.values):
            lines.append(
                f"{curve_set.kind},{unit},{_fmt17(x)},"
                f"{_fmt17(curve_set.curves[unit, gi])}"
            )
    for gi, x in enumerate(curve_set.grid.values):
        lines.append(
            f"{curve_set.kind},mean,{_fmt17(x)},{_fmt17(curve_set.mean[gi])}"
        )
    return "\n".join(lines) + "\n"


def export_band_csv(band: BandSet) -> str:
    lines = ["plot_kind,unit,grid_value,value"]
    for i in range(len(band.labels)):
        for gi, x in enumerate(band.grid.values):
            lines.append(
                f"{band.kind},{i},{_fmt17(x)},{_fmt17(band.curves[i, gi])}"
            )
    for name, row in (("lower", band.lower), ("upper", band.upper)):
        for gi, x in enumerate(band.grid.values):
            lines.append(f"{band.kind},{name},{_fmt17(x)},{_fmt17(row[gi])}")
    return "\n".join(lines) + "\n"


def import_csv(text: str, var: str = "x") -> CurveSet:
    """Rebuild a CurveSet from export_csv output. Values survive the
    round trip exactly; the grid variable name is not stored in the
    file, so it must be supplied."""
    lines = [line for line in text.split("\n") if line]
    if not lines or lines[0] != "plot_kind,unit,grid_value,value":
        raise EngineError("not a curve table: bad header")
    kinds = set()
    per_unit: dict[int, list[tuple[float, float]]] = {}
    mean_rows: list[tuple[float, float]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 4:
            raise EngineError(f"bad row at line {lineno}")
        kind, unit, grid_value, value = parts
        kinds.add(kind)
        point = (float(grid_value), float(value))
        if unit == "mean":
            mean_rows.append(point)
        else:
            per_unit.setdefault(int(unit), []).append(point)
    if len(kinds) != 1:
        raise EngineError(f"mixed plot kinds in one file: {sorted(kinds)}")
    if not mean_rows or not per_unit:
        raise EngineError("curve table is missing unit or mean rows")
    grid_values = [x for x, _ in mean_rows]
    units = sorted(per_unit)
    if units != list(range(len(units))):
        raise EngineError("unit numbering has gaps")
    curves = np.empty((len(units), len(grid_values)))
    for unit in units:
        rows = per_unit[unit]
        if [x for x, _ in rows] != grid_values:
            raise EngineError(f"unit {unit} grid does not match the mean grid")
        curves[unit] = [y for _, y in rows]
    mean = np.asarray([y for _, y in mean_rows])
    return CurveSet(kinds.pop(), Grid(var, np.asarray(grid_values)), curves, mean)
