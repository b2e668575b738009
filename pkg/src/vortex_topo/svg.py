"""Static, byte-deterministic SVG figures.

Coordinates are written with a fixed number of decimals and elements are
emitted in input order, so identical inputs give identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import EmptyData
from .tracer import LineStatus

PLANES = {"xy": (0, 1), "yz": (1, 2), "xz": (0, 2)}
AXIS_NAMES = "xyz"
TOROIDAL_FILL = "#3b6fd8"
SIMPLY_CONNECTED_FILL = "#d83b3b"


@dataclass(frozen=True)
class FigureSpec:
    """Canvas, projection plane and axis ranges; ranges default to the data extent."""

    plane: str | None = "xy"  # None for non-spatial plots
    width: int = 640
    height: int = 480
    margin: int = 60
    x_range: tuple[float, float] | None = None
    y_range: tuple[float, float] | None = None
    title: str = ""
    x_label: str | None = None
    y_label: str | None = None
    equal_aspect: bool = True

    def labels(self) -> tuple[str, str]:
        if self.plane is None:
            return self.x_label or "", self.y_label or ""
        i, j = PLANES[self.plane]
        return (self.x_label or f"{AXIS_NAMES[i]} [m]", self.y_label or f"{AXIS_NAMES[j]} [m]")


@dataclass
class Polyline:
    points: np.ndarray  # (N, 2) in data units
    closed: bool = False
    stroke: str = "#000000"
    width: float = 1.0
    dash: str | None = None
    meta: dict = field(default_factory=dict)


@dataclass
class Region:
    points: np.ndarray  # (N, 2) polygon in data units
    fill: str
    meta: dict = field(default_factory=dict)


def project(points, plane: str) -> np.ndarray:
    i, j = PLANES[plane]
    p = np.asarray(points, dtype=float)
    return p[:, [i, j]]


def _range(vals: np.ndarray, pad: float = 0.05) -> tuple[float, float]:
    lo, hi = float(np.min(vals)), float(np.max(vals))
    span = hi - lo if hi > lo else max(abs(hi), 1.0)
    return lo - pad * span, hi + pad * span


def _num(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _tick(v: float) -> str:
    s = f"{v:.3g}"
    return "0" if s == "-0" else s


def emit_svg(spec: FigureSpec, items: Sequence[Polyline | Region]) -> bytes:
    """Render ``items`` into a self-contained SVG document.

    Raises
    ------
    EmptyData
        If there are no items or every item is empty.
    """
    items = [it for it in items if len(it.points)]
    if not items:
        raise EmptyData("nothing to draw")
    allp = np.concatenate([np.asarray(it.points, dtype=float) for it in items])
    xr = spec.x_range or _range(allp[:, 0])
    yr = spec.y_range or _range(allp[:, 1])
    W, H, M = spec.width, spec.height, spec.margin
    pw, ph = W - 2 * M, H - 2 * M
    sx, sy = pw / (xr[1] - xr[0]), ph / (yr[1] - yr[0])
    if spec.equal_aspect and spec.plane is not None:
        s = min(sx, sy)
        cx, cy = 0.5 * (xr[0] + xr[1]), 0.5 * (yr[0] + yr[1])
        xr = (cx - 0.5 * pw / s, cx + 0.5 * pw / s)
        yr = (cy - 0.5 * ph / s, cy + 0.5 * ph / s)
        sx = sy = s

    def to_px(p: np.ndarray) -> np.ndarray:
        return np.stack([M + (p[:, 0] - xr[0]) * sx, H - M - (p[:, 1] - yr[0]) * sy], axis=-1)

    def path_d(p: np.ndarray, closed: bool) -> str:
        q = to_px(np.asarray(p, dtype=float))
        d = "M" + " L".join(f"{_num(a)} {_num(b)}" for a, b in q)
        return d + (" Z" if closed else "")

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="#ffffff"/>',
        f'<clipPath id="plot"><rect x="{M}" y="{M}" width="{pw}" height="{ph}"/></clipPath>',
        '<g clip-path="url(#plot)">',
    ]
    for it in items:
        if isinstance(it, Region):
            out.append(f'<path class="region" d="{path_d(it.points, True)}" fill="{it.fill}" stroke="none"/>')
        else:
            dash = f' stroke-dasharray="{it.dash}"' if it.dash else ""
            out.append(
                f'<path class="line" d="{path_d(it.points, it.closed)}" fill="none" stroke="{it.stroke}" '
                f'stroke-width="{it.width:g}"{dash}/>'
            )
    out.append("</g>")
    out.append(f'<rect x="{M}" y="{M}" width="{pw}" height="{ph}" fill="none" stroke="#000000"/>')
    for v in np.linspace(xr[0], xr[1], 5):
        px = M + (v - xr[0]) * sx
        out.append(f'<line x1="{_num(px)}" y1="{H - M}" x2="{_num(px)}" y2="{H - M + 5}" stroke="#000000"/>')
        out.append(f'<text x="{_num(px)}" y="{H - M + 18}" font-size="11" text-anchor="middle">{_tick(v)}</text>')
    for v in np.linspace(yr[0], yr[1], 5):
        py = H - M - (v - yr[0]) * sy
        out.append(f'<line x1="{M - 5}" y1="{_num(py)}" x2="{M}" y2="{_num(py)}" stroke="#000000"/>')
        out.append(f'<text x="{M - 8}" y="{_num(py + 4)}" font-size="11" text-anchor="end">{_tick(v)}</text>')
    xl, yl = spec.labels()
    out.append(f'<text x="{W / 2:g}" y="{H - 15}" font-size="13" text-anchor="middle">{escape(xl)}</text>')
    out.append(
        f'<text x="15" y="{H / 2:g}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 15 {H / 2:g})">{escape(yl)}</text>'
    )
    if spec.title:
        out.append(f'<text x="{W / 2:g}" y="25" font-size="14" text-anchor="middle">{escape(spec.title)}</text>')
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode("utf-8")


def bucket_colors(n: int) -> list[str]:
    """``n`` distinct colours running from blue to red."""
    if n < 1:
        raise ValueError("need at least one bucket")
    t = np.linspace(0.0, 1.0, n)
    lo, hi = np.array([30, 60, 200]), np.array([220, 40, 40])
    rgb = np.rint(lo + np.outer(t, hi - lo)).astype(int)
    return ["#%02x%02x%02x" % tuple(c) for c in rgb]


def time_buckets(t: np.ndarray, points: np.ndarray, n_buckets: int = 10) -> list[Polyline]:
    """Split a polyline into ``n_buckets`` equal time windows with distinct colours.

    Consecutive segments share their boundary sample so the drawn curve stays
    connected.
    """
    t = np.asarray(t, dtype=float)
    points = np.asarray(points, dtype=float)
    if len(t) == 0:
        raise EmptyData("empty trajectory")
    edges = np.linspace(t[0], t[-1], n_buckets + 1)
    idx = np.clip(np.searchsorted(t, edges[1:-1], side="left"), 1, len(t) - 1)
    starts = np.concatenate([[0], idx])
    stops = np.concatenate([idx, [len(t)]])
    colors = bucket_colors(n_buckets)
    out = []
    for b, (i0, i1) in enumerate(zip(starts, stops)):
        seg = points[max(i0 - 1, 0) : i1]
        out.append(Polyline(seg, stroke=colors[b], width=0.6,
                            meta={"bucket": b, "t0": float(edges[b]), "t1": float(edges[b + 1])}))
    return out


def field_line_items(lines, plane: str = "yz") -> list[Polyline]:
    """One path per field line; closed lines are drawn as closed paths."""
    return [
        Polyline(project(ln.points, plane), closed=ln.status is LineStatus.CLOSED, width=1.0)
        for ln in lines
        if len(ln.points)
    ]


def region_items(alpha_ratio, psi_ratio) -> list[Polyline | Region]:
    """Toroidal region below the ``psi_-/psi_+`` curve, simply connected above, curve dashed."""
    x = np.asarray(alpha_ratio, dtype=float)
    y = np.asarray(psi_ratio, dtype=float)
    if x.size == 0:
        raise EmptyData("empty sweep")
    curve = np.stack([x, y], axis=-1)
    below = np.concatenate([[[x[0], 0.0]], curve, [[x[-1], 0.0]]])
    above = np.concatenate([[[x[0], 1.0]], curve, [[x[-1], 1.0]]])
    return [
        Region(below, TOROIDAL_FILL, meta={"class": "Toroidal"}),
        Region(above, SIMPLY_CONNECTED_FILL, meta={"class": "SimplyConnected"}),
        Polyline(curve, stroke="#000000", width=2.0, dash="6 4", meta={"class": "InnerSeparatrix"}),
    ]
