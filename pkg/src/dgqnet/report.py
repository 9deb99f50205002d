"""Report emission: metric bar charts with CI whiskers, ROC overlays,
and a markdown summary, all built as plain strings.

SVG output is fixed at 800x600 with inline styles only, and identical
inputs produce byte-identical files; nothing here depends on time,
locale, or dict iteration hazards.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import DataError
from .metrics import METRIC_KEYS

WIDTH, HEIGHT = 800, 600
PALETTE = ("#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee",
           "#aa3377", "#bbbbbb")

ROC_HEADER = ["fpr", "tpr", "threshold"]


def _esc(text: str) -> str:
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


def _num(value: float) -> str:
    return f"{value:.2f}"


def _label(value: float) -> str:
    return f"{value:.4f}"


def load_metrics_file(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read metrics file {path}: {exc}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise DataError(f"{path}: expected a JSON object")
    if "name" not in data or not isinstance(data["name"], str):
        raise DataError(f"{path}: missing key 'name'")
    for key in METRIC_KEYS:
        if key not in data:
            raise DataError(f"{path}: missing key {key!r}")
        value = data[key]
        if value is None and key == "auc":
            continue
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise DataError(f"{path}: key {key!r} must be a number")
    ci = data.get("ci", {})
    if not isinstance(ci, dict):
        raise DataError(f"{path}: key 'ci' must be an object")
    for key, bounds in ci.items():
        if (not isinstance(bounds, (list, tuple)) or len(bounds) != 2
                or any(isinstance(b, bool) or not isinstance(b, (int, float))
                       for b in bounds)):
            raise DataError(f"{path}: ci entry {key!r} must be [lower, upper]")
    return data


def load_roc_file(path) -> Tuple[str, List[Tuple[float, float]]]:
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != ROC_HEADER:
                raise DataError(
                    f"{path}: expected header {','.join(ROC_HEADER)}, got {header}"
                )
            points = []
            for lineno, row in enumerate(reader, start=2):
                try:
                    points.append((float(row[0]), float(row[1])))
                except (ValueError, IndexError) as exc:
                    raise DataError(f"{path}:{lineno}: bad ROC row {row}") from exc
    except OSError as exc:
        raise DataError(f"cannot read ROC file {path}: {exc}") from exc
    if len(points) < 2:
        raise DataError(f"{path}: ROC curve needs at least 2 points")
    return path.stem, points


def _svg_open(title: str) -> List[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{WIDTH / 2:.0f}" y="24" font-family="sans-serif" '
        f'font-size="16" text-anchor="middle">{_esc(title)}</text>',
    ]


def _legend(lines: List[str], names: Sequence[str], x: float, y: float) -> None:
    for i, name in enumerate(names):
        color = PALETTE[i % len(PALETTE)]
        yy = y + 16 * i
        lines.append(f'<rect x="{_num(x)}" y="{_num(yy)}" width="10" '
                     f'height="10" fill="{color}"/>')
        lines.append(f'<text x="{_num(x + 14)}" y="{_num(yy + 9)}" '
                     f'font-family="sans-serif" font-size="11">{_esc(name)}</text>')


def render_metric_bars(entries: Sequence[dict]) -> str:
    """Grouped bars, one group per metric, one bar per entry, whiskers
    from the ci bounds where present."""
    left, right, top, bottom = 60.0, 780.0, 50.0, 500.0

    def ys(value: float) -> float:
        return bottom - value * (bottom - top)

    lines = _svg_open("Metrics with 95% bootstrap CI")
    for i in range(6):
        v = i / 5.0
        y = ys(v)
        lines.append(f'<line x1="{_num(left)}" y1="{_num(y)}" x2="{_num(right)}" '
                     f'y2="{_num(y)}" stroke="#dddddd" stroke-width="1"/>')
        lines.append(f'<text x="{_num(left - 8)}" y="{_num(y + 4)}" '
                     f'font-family="sans-serif" font-size="11" '
                     f'text-anchor="end">{v:.1f}</text>')
    lines.append(f'<line x1="{_num(left)}" y1="{_num(top)}" x2="{_num(left)}" '
                 f'y2="{_num(bottom)}" stroke="#000000" stroke-width="1"/>')
    lines.append(f'<line x1="{_num(left)}" y1="{_num(bottom)}" x2="{_num(right)}" '
                 f'y2="{_num(bottom)}" stroke="#000000" stroke-width="1"/>')

    group_width = (right - left) / len(METRIC_KEYS)
    slot = group_width / max(len(entries), 1)
    bar_width = min(26.0, slot * 0.8)
    for mi, key in enumerate(METRIC_KEYS):
        gx = left + mi * group_width
        lines.append(f'<text x="{_num(gx + group_width / 2)}" y="{_num(bottom + 20)}" '
                     f'font-family="sans-serif" font-size="12" '
                     f'text-anchor="middle">{key}</text>')
        for ei, entry in enumerate(entries):
            value = entry.get(key)
            if value is None:
                continue
            color = PALETTE[ei % len(PALETTE)]
            cx = gx + ei * slot + slot / 2
            x0 = cx - bar_width / 2
            y0 = ys(value)
            lines.append(f'<rect x="{_num(x0)}" y="{_num(y0)}" '
                         f'width="{_num(bar_width)}" '
                         f'height="{_num(bottom - y0)}" fill="{color}"/>')
            lines.append(f'<text x="{_num(cx)}" y="{_num(y0 - 14)}" '
                         f'font-family="sans-serif" font-size="8" '
                         f'text-anchor="middle">{_label(value)}</text>')
            bounds = entry.get("ci", {}).get(key)
            if bounds:
                lo, hi = ys(bounds[0]), ys(bounds[1])
                lines.append(f'<line x1="{_num(cx)}" y1="{_num(lo)}" '
                             f'x2="{_num(cx)}" y2="{_num(hi)}" '
                             f'stroke="#333333" stroke-width="1.5"/>')
                for yy in (lo, hi):
                    lines.append(f'<line x1="{_num(cx - 4)}" y1="{_num(yy)}" '
                                 f'x2="{_num(cx + 4)}" y2="{_num(yy)}" '
                                 f'stroke="#333333" stroke-width="1.5"/>')
    _legend(lines, [e["name"] for e in entries], left + 4, bottom + 36)
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def render_roc_overlay(curves: Sequence[Tuple[str, List[Tuple[float, float]]]]) -> str:
    """Overlayed ROC curves on the exact [0,1]x[0,1] box with a diagonal
    reference line."""
    left, top = 80.0, 60.0
    size = 460.0

    def xs(fpr: float) -> float:
        return left + fpr * size

    def ys(tpr: float) -> float:
        return top + size - tpr * size

    lines = _svg_open("ROC curves (unseen domain)")
    for i in range(6):
        v = i / 5.0
        lines.append(f'<line x1="{_num(xs(v))}" y1="{_num(ys(0))}" '
                     f'x2="{_num(xs(v))}" y2="{_num(ys(1))}" '
                     f'stroke="#eeeeee" stroke-width="1"/>')
        lines.append(f'<line x1="{_num(xs(0))}" y1="{_num(ys(v))}" '
                     f'x2="{_num(xs(1))}" y2="{_num(ys(v))}" '
                     f'stroke="#eeeeee" stroke-width="1"/>')
        lines.append(f'<text x="{_num(xs(v))}" y="{_num(ys(0) + 18)}" '
                     f'font-family="sans-serif" font-size="11" '
                     f'text-anchor="middle">{v:.1f}</text>')
        lines.append(f'<text x="{_num(xs(0) - 8)}" y="{_num(ys(v) + 4)}" '
                     f'font-family="sans-serif" font-size="11" '
                     f'text-anchor="end">{v:.1f}</text>')
    lines.append(f'<rect x="{_num(left)}" y="{_num(top)}" width="{_num(size)}" '
                 f'height="{_num(size)}" fill="none" stroke="#000000" '
                 f'stroke-width="1"/>')
    lines.append(f'<line x1="{_num(xs(0))}" y1="{_num(ys(0))}" '
                 f'x2="{_num(xs(1))}" y2="{_num(ys(1))}" stroke="#999999" '
                 f'stroke-width="1" stroke-dasharray="6,4"/>')
    lines.append(f'<text x="{_num(left + size / 2)}" y="{_num(ys(0) + 40)}" '
                 f'font-family="sans-serif" font-size="13" '
                 f'text-anchor="middle">False positive rate</text>')
    lines.append(f'<text x="{_num(left - 44)}" y="{_num(top + size / 2)}" '
                 f'font-family="sans-serif" font-size="13" text-anchor="middle" '
                 f'transform="rotate(-90 {_num(left - 44)} '
                 f'{_num(top + size / 2)})">True positive rate</text>')
    for i, (_, points) in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        path = " ".join(f"{_num(xs(x))},{_num(ys(y))}" for x, y in points)
        lines.append(f'<polyline points="{path}" fill="none" stroke="{color}" '
                     f'stroke-width="2"/>')
    _legend(lines, [name for name, _ in curves], left + size + 24, top + 8)
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def render_summary(entries: Sequence[dict]) -> str:
    out = ["# Evaluation summary", ""]
    header = "| model | " + " | ".join(METRIC_KEYS) + " |"
    rule = "|---" * (len(METRIC_KEYS) + 1) + "|"
    out += [header, rule]
    for entry in entries:
        cells = [_label(entry[k]) if entry.get(k) is not None else "n/a"
                 for k in METRIC_KEYS]
        out.append("| " + entry["name"] + " | " + " | ".join(cells) + " |")
    for entry in entries:
        out += ["", f"## {entry['name']}", ""]
        ci = entry.get("ci", {})
        if ci:
            out += ["| metric | point | lower | upper |", "|---|---|---|---|"]
            for key in METRIC_KEYS:
                if key in ci and entry.get(key) is not None:
                    out.append(f"| {key} | {_label(entry[key])} | "
                               f"{_label(ci[key][0])} | {_label(ci[key][1])} |")
            out.append("")
        confusion = entry.get("confusion")
        if confusion:
            out += [
                "|  | predicted 0 | predicted 1 |",
                "|---|---|---|",
                f"| true 0 | {confusion['tn']} | {confusion['fp']} |",
                f"| true 1 | {confusion['fn']} | {confusion['tp']} |",
                "",
            ]
    return "\n".join(out).rstrip("\n") + "\n"


def emit_report(metric_paths: Sequence, roc_paths: Sequence = (),
                out_dir=".") -> Dict[str, Optional[Path]]:
    """Read metrics JSONs (and optional ROC CSVs), write metrics.svg,
    roc.svg, and summary.md into out_dir."""
    if not metric_paths:
        raise DataError("need at least one metrics file")
    entries = [load_metrics_file(p) for p in metric_paths]
    curves = [load_roc_file(p) for p in roc_paths]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    bars_path = out_dir / "metrics.svg"
    bars_path.write_text(render_metric_bars(entries), encoding="utf-8")
    roc_path: Optional[Path] = None
    if curves:
        roc_path = out_dir / "roc.svg"
        roc_path.write_text(render_roc_overlay(curves), encoding="utf-8")
    summary_path = out_dir / "summary.md"
    summary_path.write_text(render_summary(entries), encoding="utf-8")
    return dict(bars=bars_path, roc=roc_path, summary=summary_path)
