"""Deterministic SVG network diagrams and plain-text regression tables."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .ena import EnaSpace, MeanNetwork, SubtractionNetwork, code_pairs
from .stats import TABLE_ROWS, RegressionResult
from .trace import CODES


@dataclass(frozen=True)
class NetworkStyle:
    color_a: str = "#1f4e9c"  # blue
    color_b: str = "#c0392b"  # red
    neutral: str = "#555555"
    canvas: int = 600
    margin: int = 60
    min_edge: float = 0.5
    max_edge: float = 10.0
    min_radius: float = 4.0
    max_radius: float = 20.0


def _fmt(x: float) -> str:
    s = f"{x:.3f}"
    return "0.000" if s == "-0.000" else s


def _canvas_transform(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Center of the bounding box and the scale taking it into [-1, 1]^2."""
    lo, hi = points.min(axis=0), points.max(axis=0)
    center = (lo + hi) / 2
    extent = float(np.max(hi - lo))
    scale = 2.0 / extent if extent > 0 else 1.0
    return center, scale


def render_network(
    space: EnaSpace,
    network: MeanNetwork | SubtractionNetwork,
    style: NetworkStyle | None = None,
    group_means: Mapping[str, Sequence[float]] | None = None,
    node_labels: Sequence[str] | None = None,
    path: str | Path | None = None,
) -> str:
    """Render a mean or subtraction network on the fitted node positions.

    Node radius grows with total incident |weight| and edge width with
    |weight|. Subtraction edges take ``color_a`` when positive (first group
    dominates) and ``color_b`` when negative. ``group_means`` maps a group
    name to its mean (x, y) score and is drawn as a square; names matching
    the subtraction's groups pick up their colors.
    """
    style = style or NetworkStyle()
    if space.node_positions is None:
        raise ValueError("space has no node positions; fit them first")
    pos = np.asarray(space.node_positions, dtype=float)
    if pos.shape[1] == 1:
        pos = np.column_stack([pos, np.zeros(len(pos))])
    pos = pos[:, :2]
    k = len(pos)
    labels = list(node_labels) if node_labels is not None else [c.value for c in CODES][:k]

    if isinstance(network, SubtractionNetwork):
        weights = np.asarray(network.signed_weights, dtype=float)
        kind = "subtraction"
        title = f"{network.group_a} - {network.group_b}"
    else:
        weights = np.asarray(network.edge_weights, dtype=float)
        kind = "mean"
        title = network.group_id
    pairs = code_pairs(k)
    if len(weights) != len(pairs):
        raise ValueError("network size does not match the node count")

    scores = space.scores[space.fit_mask]
    scores = np.column_stack([scores, np.zeros(len(scores))])[:, :2] if scores.shape[1] == 1 else scores[:, :2]
    means = {name: np.asarray(xy, dtype=float)[:2] for name, xy in (group_means or {}).items()}
    cloud = np.vstack([pos, scores] + [m[None, :] for m in means.values()])
    center, scale = _canvas_transform(cloud)
    half = (style.canvas - 2 * style.margin) / 2

    def to_px(xy: np.ndarray) -> tuple[float, float]:
        u = (xy - center) * scale
        return style.canvas / 2 + u[0] * half, style.canvas / 2 - u[1] * half

    magnitude = np.abs(weights)
    top = magnitude.max() if magnitude.size else 0.0
    strength = np.zeros(k)
    for (i, j), w in zip(pairs, magnitude):
        strength[i] += w
        strength[j] += w

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{style.canvas}" height="{style.canvas}" '
        f'viewBox="0 0 {style.canvas} {style.canvas}" data-kind="{kind}" '
        f'data-scale="{_fmt(scale)}" data-center="{_fmt(center[0])},{_fmt(center[1])}">',
        f"<title>{escape(title)}</title>",
        '<g class="edges">',
    ]
    for p, ((i, j), w) in enumerate(zip(pairs, weights)):
        if w == 0:
            continue
        if kind == "subtraction":
            color = style.color_a if w > 0 else style.color_b
        else:
            color = style.neutral
        width = style.min_edge + (style.max_edge - style.min_edge) * abs(w) / top
        x1, y1 = to_px(pos[i])
        x2, y2 = to_px(pos[j])
        out.append(
            f'<line class="edge" data-pair="{escape(labels[i])}|{escape(labels[j])}" '
            f'data-weight="{w:.6f}" x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
            f'stroke="{color}" stroke-width="{_fmt(width)}"/>'
        )
    out.append("</g>")

    out.append('<g class="means">')
    side = 10.0
    for name in sorted(means):
        color = style.neutral
        if kind == "subtraction":
            color = style.color_a if name == network.group_a else style.color_b if name == network.group_b else color
        x, y = to_px(means[name])
        out.append(
            f'<rect class="group-mean" data-group="{escape(name)}" x="{_fmt(x - side / 2)}" '
            f'y="{_fmt(y - side / 2)}" width="{_fmt(side)}" height="{_fmt(side)}" fill="{color}"/>'
        )
    out.append("</g>")

    out.append('<g class="nodes">')
    smax = strength.max()
    for i in range(k):
        r = style.min_radius + (style.max_radius - style.min_radius) * (strength[i] / smax if smax > 0 else 0.0)
        x, y = to_px(pos[i])
        out.append(
            f'<circle class="node" data-code="{escape(labels[i])}" cx="{_fmt(x)}" cy="{_fmt(y)}" '
            f'r="{_fmt(r)}" fill="#ffffff" stroke="#000000"/>'
        )
        out.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y - r - 4)}" text-anchor="middle" font-size="11">{escape(labels[i])}</text>'
        )
    out.append("</g>")
    out.append("</svg>")
    svg = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(svg, encoding="utf-8")
    return svg


# --- regression table -------------------------------------------------------


ROW_LABELS = {"intercept": "Intercept"}


def stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def _num(x: float) -> str:
    return f"{x:.2f}"


def format_coefficient(beta: float, p: float) -> str:
    return _num(beta) + stars(p)


def format_se(se: float) -> str:
    return f"({_num(se)})"


def format_cell(beta: float, se: float, p: float) -> str:
    return f"{format_coefficient(beta, p)} {format_se(se)}"


def format_p(p: float | None) -> str:
    if p is None:
        return "-"
    for cut in (0.001, 0.01, 0.05):
        if p < cut:
            return f"<{cut:g}"
    return _num(p)


def render_table(
    results: Mapping[str, RegressionResult] | Sequence[RegressionResult],
    headers: Mapping[str, str] | None = None,
) -> str:
    """Plain-text regression table, one column per model.

    Coefficients carry significance stars, standard errors sit in
    parentheses on the line below, and variables a model omits show ``-``.
    """
    if not isinstance(results, Mapping):
        results = {r.model_id or f"Model {i + 1}": r for i, r in enumerate(results)}
    headers = headers or {}
    models = list(results)
    names = [n for n in TABLE_ROWS if any(n in r.coefficients for r in results.values())]
    names += [n for r in results.values() for n in r.names if n not in names]

    rows: list[list[str]] = [[""] + [headers.get(m, m) for m in models]]
    rule_after = [0]
    for name in names:
        coef_row = [ROW_LABELS.get(name, name)]
        se_row = [""]
        for m in models:
            r = results[m]
            if name in r.coefficients:
                coef_row.append(format_coefficient(r.coefficients[name], r.p_values[name]))
                se_row.append(format_se(r.standard_errors[name]))
            else:
                coef_row.append("-")
                se_row.append("-")
        rows += [coef_row, se_row]
    rule_after.append(len(rows) - 1)
    rows.append(["Residual"] + [_num(results[m].residual_se) for m in models])
    rows.append(["R-squared"] + [_num(results[m].r_squared) for m in models])
    rows.append(
        ["F-value"] + ["-" if results[m].f_value is None else _num(results[m].f_value) for m in models]
    )
    rows.append(["p-value"] + [format_p(results[m].f_p_value) for m in models])
    rows.append(["Num. obs."] + [str(results[m].n_obs) for m in models])
    rule_after.append(len(rows) - 1)

    widths = [max(len(row[c]) for row in rows) for c in range(len(rows[0]))]
    total = sum(widths) + 2 * (len(widths) - 1)
    lines = ["-" * total]
    for i, row in enumerate(rows):
        cells = [row[0].ljust(widths[0])] + [cell.center(w) for cell, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if i in rule_after:
            lines.append("-" * total)
    lines.append("***p<0.001; **p<0.01; *p<0.05")
    return "\n".join(lines) + "\n"
