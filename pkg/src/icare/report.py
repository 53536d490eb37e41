"""Dependency-free SVG line plots for precision-recall curves."""
from __future__ import annotations

import os
from xml.sax.saxutils import escape

from icare.evaluation import read_pr_csv

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
WIDTH, HEIGHT, MARGIN = 420, 360, 48


def _xy(x, y):
    px = MARGIN + x * (WIDTH - 2 * MARGIN)
    py = HEIGHT - MARGIN - y * (HEIGHT - 2 * MARGIN)
    return f"{px:.2f},{py:.2f}"


def svg_line_plot(curves, title, xlabel="recall", ylabel="precision"):
    """``curves`` maps a legend label to a list of (x, y) points in [0, 1]^2."""
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" '
        f'font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<polyline points="{_xy(0, 1)} {_xy(0, 0)} {_xy(1, 0)}" fill="none" stroke="black"/>',
    ]
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        x, y = _xy(t, 0).split(",")
        out.append(f'<text x="{x}" y="{float(y) + 14:.2f}" text-anchor="middle">{t:g}</text>')
        x, y = _xy(0, t).split(",")
        out.append(f'<text x="{float(x) - 6:.2f}" y="{float(y) + 4:.2f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>')
    for k, (label, pts) in enumerate(curves.items()):
        colour = PALETTE[k % len(PALETTE)]
        path = " ".join(_xy(min(max(x, 0.0), 1.0), min(max(y, 0.0), 1.0)) for x, y in pts)
        out.append(f'<polyline points="{path}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        ly = 40 + 14 * k
        out.append(f'<line x1="{WIDTH - 150}" y1="{ly}" x2="{WIDTH - 132}" y2="{ly}" stroke="{colour}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - 128}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_pr_figures(csv_path, out_dir, annotator="main", subset="all"):
    """One SVG per mode (a curve per seed) plus an overlay of every mode's first seed."""
    curves = read_pr_csv(csv_path)
    os.makedirs(out_dir, exist_ok=True)
    by_mode = {}
    for (mode, seed, ann, sub), pts in sorted(curves.items()):
        if ann == annotator and sub == subset:
            by_mode.setdefault(mode or "-", {})[seed] = [(p.recall, p.precision) for p in pts]
    written = []
    for mode, seeds in by_mode.items():
        path = os.path.join(out_dir, f"pr_mode_{mode}.svg")
        with open(path, "w") as fh:
            fh.write(svg_line_plot({f"seed {s}": pts for s, pts in seeds.items()}, f"mode {mode}"))
        written.append(path)
    overlay = {f"mode {m}": next(iter(seeds.values())) for m, seeds in by_mode.items()}
    path = os.path.join(out_dir, "pr_overlay.svg")
    with open(path, "w") as fh:
        fh.write(svg_line_plot(overlay, f"precision-recall ({annotator}, {subset})"))
    written.append(path)
    return written
