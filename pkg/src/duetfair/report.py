"""Comparison reports across evaluated methods.

Consumes one or more metrics JSON files (one per method), cross-checks
that each file's equity-scaled numbers match a recomputation from its
own population and per-group means, and emits:

    comparison.csv   one row per (method, group): mean Dice/IoU, n, and
                     a worst-group marker
    summary.json     population/ES metrics and CIs per method
    dice_<label>.svg one figure per group: a horizontal Dice histogram
                     row per method with a mean diamond and ticks at the
                     25th/50th/75th percentiles

The SVG is emitted directly (fixed 640x240 viewport per group); no
plotting dependency.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import equity_scaled

ES_CONSISTENCY_TOL = 1e-9

_SVG_W = 640
_SVG_H = 240
_MARGIN_L = 110
_MARGIN_R = 20
_BINS = 24


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class MethodReport:
    name: str
    doc: dict

    @property
    def group_labels(self) -> tuple[str, ...]:
        groups = self.doc["per_group"]
        return tuple(groups[k]["label"] for k in sorted(groups, key=int))


def load_method_report(path: str | Path) -> MethodReport:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    name = path.parent.name if path.parent.name not in ("", ".") else path.stem
    return MethodReport(name=name, doc=doc)


def check_es_consistency(report: MethodReport) -> None:
    """The file's ES fields must match recomputation from its own means."""
    doc = report.doc
    pg = [doc["per_group"][k] for k in sorted(doc["per_group"], key=int)]
    for metric, key in (("mean_dice", "es_dice"), ("mean_iou", "es_iou")):
        pop = doc["population"][metric]
        recomputed = equity_scaled(pop, [g[metric] for g in pg])
        stored = doc["es"][key]
        if abs(recomputed - stored) > ES_CONSISTENCY_TOL:
            raise ReportError(
                f"{report.name}: stored {key}={stored!r} disagrees with "
                f"recomputation {recomputed!r}"
            )


def emit_report(report_paths: list[str], out_dir: str | Path) -> list[Path]:
    """Build the comparison bundle; returns the emitted file paths."""
    if not report_paths:
        raise ReportError("at least one metrics report is required")
    reports = [load_method_report(p) for p in report_paths]
    labels = reports[0].group_labels
    for rep in reports[1:]:
        if rep.group_labels != labels:
            raise ReportError(
                f"group labels disagree: {reports[0].name} has {labels}, "
                f"{rep.name} has {rep.group_labels}"
            )
    for rep in reports:
        check_es_consistency(rep)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emitted = []

    csv_path = out / "comparison.csv"
    lines = ["method,group,mean_dice,mean_iou,n,worst_group"]
    for rep in reports:
        doc = rep.doc
        worst = int(doc["worst_group"]["group"])
        for k in sorted(doc["per_group"], key=int):
            g = doc["per_group"][k]
            lines.append(
                f"{rep.name},{g['label']},{g['mean_dice']!r},{g['mean_iou']!r},{g['n']},{int(int(k) == worst)}"
            )
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    emitted.append(csv_path)

    summary = {
        rep.name: {
            "population": rep.doc["population"],
            "es": rep.doc["es"],
            "worst_group": rep.doc["worst_group"],
            "cis": rep.doc.get("cis"),
        }
        for rep in reports
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    emitted.append(summary_path)

    for gid, label in enumerate(labels):
        svg_path = out / f"dice_{label}.svg"
        svg_path.write_text(_group_svg(reports, gid, label), encoding="utf-8")
        emitted.append(svg_path)
    return emitted


def _dice_values(report: MethodReport, gid: int) -> np.ndarray:
    return np.asarray([r["dice"] for r in report.doc["per_sample"] if int(r["group"]) == gid])


def _x(value: float) -> float:
    return _MARGIN_L + value * (_SVG_W - _MARGIN_L - _MARGIN_R)


def _group_svg(reports: list[MethodReport], gid: int, label: str) -> str:
    rows = len(reports)
    band = (_SVG_H - 40) / rows
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<text x="{_MARGIN_L}" y="16" font-family="sans-serif" font-size="13" '
        f'font-weight="bold">Dice distribution, group {label}</text>',
    ]
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        x = _x(t)
        parts.append(
            f'<line x1="{x:.1f}" y1="24" x2="{x:.1f}" y2="{_SVG_H - 18}" stroke="#ddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{_SVG_H - 6}" font-family="sans-serif" font-size="10" '
            f'text-anchor="middle" fill="#666">{t:g}</text>'
        )

    edges = np.linspace(0.0, 1.0, _BINS + 1)
    for i, rep in enumerate(reports):
        top = 28 + i * band
        base = top + band - 10
        values = _dice_values(rep, gid)
        counts, _ = np.histogram(values, bins=edges)
        peak = max(int(counts.max()), 1)
        parts.append(
            f'<text x="{_MARGIN_L - 8}" y="{base - 2:.1f}" font-family="sans-serif" '
            f'font-size="11" text-anchor="end">{rep.name}</text>'
        )
        parts.append(
            f'<line x1="{_x(0.0):.1f}" y1="{base:.1f}" x2="{_x(1.0):.1f}" y2="{base:.1f}" '
            f'stroke="#999" stroke-width="1"/>'
        )
        for b, count in enumerate(counts):
            if count == 0:
                continue
            height = (band - 22) * count / peak
            x0 = _x(edges[b])
            width = _x(edges[b + 1]) - x0
            parts.append(
                f'<rect x="{x0:.1f}" y="{base - height:.1f}" width="{width:.2f}" '
                f'height="{height:.1f}" fill="#4878a8" fill-opacity="0.75"/>'
            )
        if len(values):
            for q in (25.0, 50.0, 75.0):
                xq = _x(float(np.percentile(values, q, method="linear")))
                parts.append(
                    f'<line x1="{xq:.1f}" y1="{base - (band - 22):.1f}" x2="{xq:.1f}" '
                    f'y2="{base:.1f}" stroke="#222" stroke-width="1"/>'
                )
            xm = _x(float(values.mean()))
            ym = base - (band - 22) / 2
            parts.append(
                f'<polygon points="{xm:.1f},{ym - 5:.1f} {xm + 5:.1f},{ym:.1f} '
                f'{xm:.1f},{ym + 5:.1f} {xm - 5:.1f},{ym:.1f}" fill="#fff" stroke="#000" stroke-width="1"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
