"""Report rendering: aligned text tables, stable JSON, CSV, and SVG charts.

Every renderer here is a pure function from in-memory data to text. No
clocks, no randomness, no environment reads, so equal inputs always
produce byte-identical documents -- which is what makes golden-file
comparison and the determinism guarantees of the CLI possible.

The structured (JSON) form is the stable interface for scripts; its row
keys are class, instances, precision, recall, map50, map50_95. The
pretty table exists for humans and may change shape over time.
"""

from __future__ import annotations

import html
import json
from typing import Optional, Sequence

import numpy as np

from .backend import BenchmarkSummary, TimingRecord
from .dataset import DatasetStats, Diagnostic
from .errors import ConfigError, UnknownFormat
from .evaluation import ClassMetrics, EvalReport, EvalSettings

REPORT_FORMATS = ("table", "structured", "csv", "svg")

EVAL_TABLE_HEADER = ("Class", "Instances", "Box(P)", "Box(R)", "Box(mAP50)", "Box(mAP50-95)")


def fmt_metric(value: Optional[float]) -> str:
    """Metric cell text: up to three decimals, trailing zeros trimmed.

    Renders 0.98 rather than 0.980 and 1 rather than 1.000, matching how
    detection results are conventionally tabulated. None becomes a dash.
    """
    if value is None:
        return "-"
    return f"{value:.3f}".rstrip("0").rstrip(".") or "0"


def fmt_ms(value: float) -> str:
    return f"{value:.1f} ms"


def _esc(text: object) -> str:
    return html.escape(str(text), quote=True)


def _aligned(rows: Sequence[tuple[str, ...]]) -> str:
    """First column left-aligned, the rest right-aligned, two-space gutters."""
    widths = [max(len(row[col]) for row in rows) for col in range(len(rows[0]))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])]
        cells.extend(row[col].rjust(widths[col]) for col in range(1, len(row)))
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# evaluation report


def _metrics_cells(row: ClassMetrics) -> tuple[str, ...]:
    return (
        row.name,
        str(row.instances),
        fmt_metric(row.precision),
        fmt_metric(row.recall),
        fmt_metric(row.map50),
        fmt_metric(row.map50_95),
    )


def render_eval_table(report: EvalReport) -> str:
    """Aligned per-class results table, aggregate row first.

    The settings line at the bottom makes the document self-describing:
    the P/R columns depend on the confidence cut, the AP columns do not.
    """
    rows = [EVAL_TABLE_HEADER]
    rows.append(_metrics_cells(report.overall))
    rows.extend(_metrics_cells(row) for row in report.per_class)
    settings = report.settings
    footer = (
        f"conf_threshold={fmt_metric(settings.conf_threshold)}"
        f" iou_threshold={fmt_metric(settings.iou_threshold)}"
        f" ap_mode={settings.ap_mode}"
    )
    return _aligned(rows) + "\n\n" + footer + "\n"


def _row_to_dict(row: ClassMetrics) -> dict:
    return {
        "class": row.name,
        "instances": row.instances,
        "precision": row.precision,
        "recall": row.recall,
        "map50": row.map50,
        "map50_95": row.map50_95,
    }


def _row_from_dict(payload: dict) -> ClassMetrics:
    return ClassMetrics(
        name=payload["class"],
        instances=int(payload["instances"]),
        precision=payload["precision"],
        recall=payload["recall"],
        map50=payload["map50"],
        map50_95=payload["map50_95"],
    )


def eval_report_to_json(report: EvalReport) -> str:
    payload = {
        "settings": report.settings.to_dict(),
        "overall": _row_to_dict(report.overall),
        "classes": [_row_to_dict(row) for row in report.per_class],
        "confusion": {
            "labels": [*report.class_names, "background"],
            "matrix": report.confusion.tolist(),
        },
    }
    return json.dumps(payload, indent=2) + "\n"


def eval_report_from_json(text: str) -> EvalReport:
    """Inverse of eval_report_to_json. Values pass through unrecomputed."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"report document is not valid JSON: {exc}") from exc
    try:
        settings = EvalSettings(**payload["settings"])
        overall = _row_from_dict(payload["overall"])
        per_class = tuple(_row_from_dict(row) for row in payload["classes"])
        labels = payload["confusion"]["labels"]
        matrix = np.array(payload["confusion"]["matrix"], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed report document: {exc!r}") from exc
    if matrix.ndim != 2 or matrix.shape != (len(labels), len(labels)):
        raise ConfigError("confusion matrix shape does not match its labels")
    return EvalReport(
        settings=settings,
        overall=overall,
        per_class=per_class,
        class_names=tuple(labels[:-1]),
        confusion=matrix,
    )


def render_confusion_csv(report: EvalReport) -> str:
    """Confusion counts as CSV; rows predicted, columns true, background last."""
    labels = [*report.class_names, "background"]
    lines = [",".join(["predicted\\true", *labels])]
    for label, row in zip(labels, report.confusion):
        lines.append(",".join([label, *(str(int(v)) for v in row)]))
    return "\n".join(lines) + "\n"


def render_eval_svg(report: EvalReport) -> str:
    """Bar chart of per-class mAP50; bars carry their value in data-value."""
    values = [row.map50 for row in report.per_class]
    return _svg_bar_chart(
        "mAP50 per class",
        [row.name for row in report.per_class],
        [0.0 if v is None else v for v in values],
        [fmt_metric(v) for v in values],
    )


def render_report(report: EvalReport, format: str) -> str:
    """Dispatch to one of the report serializations by format name."""
    if format == "table":
        return render_eval_table(report)
    if format == "structured":
        return eval_report_to_json(report)
    if format == "csv":
        return render_confusion_csv(report)
    if format == "svg":
        return render_eval_svg(report)
    raise UnknownFormat(f"unknown report format {format!r}; expected one of {REPORT_FORMATS}")


# ---------------------------------------------------------------------------
# benchmark report


def render_timings_csv(records: Sequence[TimingRecord]) -> str:
    lines = ["image_id,preprocess_ms,inference_ms,postprocess_ms"]
    for rec in records:
        lines.append(
            f"{rec.image_id},{rec.preprocess_ms:.3f},{rec.inference_ms:.3f},{rec.postprocess_ms:.3f}"
        )
    return "\n".join(lines) + "\n"


def render_bench_summary(summary: BenchmarkSummary) -> str:
    """Stage latency table, one row per stage in pipeline order."""
    rows = [("stage", "mean", "median", "p95", "min", "max")]
    for name, stats in (
        ("preprocess", summary.preprocess),
        ("inference", summary.inference),
        ("postprocess", summary.postprocess),
    ):
        rows.append(
            (
                name,
                fmt_ms(stats.mean),
                fmt_ms(stats.median),
                fmt_ms(stats.p95),
                fmt_ms(stats.minimum),
                fmt_ms(stats.maximum),
            )
        )
    return _aligned(rows) + f"\n\nsamples={summary.sample_count}\n"


# ---------------------------------------------------------------------------
# dataset analysis


def stats_to_json(stats: DatasetStats, class_names: Sequence[str]) -> str:
    payload = {
        "image_count": stats.image_count,
        "total_instances": stats.total_instances,
        "class_counts": {name: count for name, count in zip(class_names, stats.class_counts)},
        "objects_per_image": {str(k): stats.objects_per_image[k] for k in sorted(stats.objects_per_image)},
        "size_hist_bins": int(stats.size_hist.shape[0]),
        "size_hist": stats.size_hist.tolist(),
    }
    return json.dumps(payload, indent=2) + "\n"


def render_class_frequency_svg(stats: DatasetStats, class_names: Sequence[str]) -> str:
    """Instance-count bar chart; each bar's count rides in data-value."""
    return _svg_bar_chart(
        "instances per class",
        list(class_names),
        [float(c) for c in stats.class_counts],
        [str(c) for c in stats.class_counts],
    )


def render_size_heatmap_svg(stats: DatasetStats) -> str:
    """Normalized box-size density; x is width bin, y is height bin.

    Only occupied cells are drawn; opacity scales linearly with count so
    the raw count is preserved in each cell's data-count attribute.
    """
    bins = int(stats.size_hist.shape[0])
    cell = 6
    left, top = 46, 30
    width = left + bins * cell + 20
    height = top + bins * cell + 40
    peak = int(stats.size_hist.max()) if stats.size_hist.size else 0
    body = [
        f'<text x="{left}" y="18" font-size="13" font-family="sans-serif">box size distribution</text>',
        f'<rect x="{left}" y="{top}" width="{bins * cell}" height="{bins * cell}" fill="none" stroke="#333"/>',
        f'<text x="{left + bins * cell / 2:.2f}" y="{top + bins * cell + 24}" font-size="10" font-family="sans-serif" text-anchor="middle">normalized width</text>',
        f'<text x="16" y="{top + bins * cell / 2:.2f}" font-size="10" font-family="sans-serif" text-anchor="middle" transform="rotate(-90 16 {top + bins * cell / 2:.2f})">normalized height</text>',
    ]
    if peak > 0:
        for i in range(bins):
            for j in range(bins):
                count = int(stats.size_hist[i, j])
                if count == 0:
                    continue
                x = left + i * cell
                y = top + (bins - 1 - j) * cell
                body.append(
                    f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="#a83248"'
                    f' fill-opacity="{count / peak:.3f}" data-count="{count}"/>'
                )
    return _svg_document(width, height, body)


def render_diagnostics(diags: Sequence[Diagnostic]) -> str:
    lines = [diag.render() for diag in diags]
    head = f"{len(lines)} finding" + ("" if len(lines) == 1 else "s")
    return "\n".join([head, *lines]) + "\n"


# ---------------------------------------------------------------------------
# SVG primitives


def _svg_document(width: float, height: float, body: Sequence[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"'
        f' viewBox="0 0 {width} {height}">'
    )
    return "\n".join([head, *body, "</svg>"]) + "\n"


def _svg_bar_chart(
    title: str,
    labels: Sequence[str],
    values: Sequence[float],
    value_texts: Sequence[str],
) -> str:
    slot, bar_w = 34, 24
    left, top, base = 40, 36, 216
    width = left + slot * max(len(labels), 1) + 20
    height = base + 84
    vmax = max(values, default=0.0)
    body = [
        f'<text x="{left}" y="18" font-size="13" font-family="sans-serif">{_esc(title)}</text>',
        f'<line x1="{left - 6}" y1="{base}" x2="{width - 10}" y2="{base}" stroke="#333"/>',
    ]
    for i, (label, value, value_text) in enumerate(zip(labels, values, value_texts)):
        x = left + i * slot
        frac = value / vmax if vmax > 0 else 0.0
        bar_h = frac * (base - top)
        y = base - bar_h
        mid = x + bar_w / 2
        body.append(
            f'<rect x="{x}" y="{y:.2f}" width="{bar_w}" height="{bar_h:.2f}" fill="#4878a8"'
            f' data-value="{_esc(value_text)}"/>'
        )
        body.append(
            f'<text x="{mid:.2f}" y="{y - 4:.2f}" font-size="8" font-family="sans-serif"'
            f' text-anchor="middle">{_esc(value_text)}</text>'
        )
        body.append(
            f'<text x="{mid:.2f}" y="{base + 12}" font-size="8" font-family="sans-serif"'
            f' text-anchor="end" transform="rotate(-45 {mid:.2f} {base + 12})">{_esc(label)}</text>'
        )
    return _svg_document(width, height, body)
