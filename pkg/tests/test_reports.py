"""Rendering: metric formatting, tables, JSON round trips, CSV, SVG."""

import json
from pathlib import Path

import numpy as np
import pytest

from roadbench.backend import TimingRecord, summarize_timings
from roadbench.dataset import (
    ClassTaxonomy,
    Diagnostic,
    GroundTruthSet,
    ImageAnnotations,
    compute_stats,
)
from roadbench.errors import ConfigError, UnknownFormat
from roadbench.evaluation import ClassMetrics, EvalReport, EvalSettings
from roadbench.geometry import NormBox
from roadbench.reports import (
    eval_report_from_json,
    eval_report_to_json,
    fmt_metric,
    fmt_ms,
    render_bench_summary,
    render_class_frequency_svg,
    render_confusion_csv,
    render_diagnostics,
    render_eval_svg,
    render_eval_table,
    render_report,
    render_size_heatmap_svg,
    render_timings_csv,
    stats_to_json,
)

FIXTURE = Path(__file__).parent / "fixtures" / "table3_report.json"


def fixture_report() -> EvalReport:
    return eval_report_from_json(FIXTURE.read_text(encoding="utf-8"))


def collapsed_lines(text: str) -> list[str]:
    return [" ".join(line.split()) for line in text.splitlines()]


def tiny_report() -> EvalReport:
    return EvalReport(
        settings=EvalSettings(),
        overall=ClassMetrics("all", 3, 0.75, 1.0, 1.0, 0.875),
        per_class=(
            ClassMetrics("rider", 2, 1.0, 1.0, 1.0, 1.0),
            ClassMetrics("cart", 1, 0.5, 1.0, 1.0, 0.75),
        ),
        class_names=("rider", "cart"),
        confusion=np.array([[2, 0, 1], [0, 1, 0], [0, 0, 0]], dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# cell formatting


@pytest.mark.parametrize(
    "value,text",
    [
        (None, "-"),
        (0.0, "0"),
        (1.0, "1"),
        (0.5, "0.5"),
        (0.75, "0.75"),
        (0.98, "0.98"),
        (0.852, "0.852"),
        (0.9799999, "0.98"),
        (0.99999, "1"),
        (0.6520004, "0.652"),
    ],
)
def test_fmt_metric(value, text):
    assert fmt_metric(value) == text


def test_fmt_ms():
    assert fmt_ms(22.4) == "22.4 ms"
    assert fmt_ms(22.44) == "22.4 ms"
    assert fmt_ms(0.2) == "0.2 ms"
    assert fmt_ms(0.0) == "0.0 ms"


# ---------------------------------------------------------------------------
# evaluation table


def test_eval_table_fixture_rows_verbatim():
    lines = collapsed_lines(render_eval_table(fixture_report()))
    assert lines[0] == "Class Instances Box(P) Box(R) Box(mAP50) Box(mAP50-95)"
    # the aggregate row comes first, then one row per taxonomy class
    assert lines[1] == "all 47118 0.852 0.815 0.861 0.652"
    assert "truck 2296 0.971 0.948 0.98 0.752" in lines
    assert "train 1 0 0.916 0.923 0.705" in lines
    assert "wheelchair 2 1 0.5 0.75 0.75" in lines
    assert "person 18010 0.9 0.858 0.915 0.599" in lines
    assert "cart-vehicle 0 - - - -" in lines
    assert "conf_threshold=0.25 iou_threshold=0.45 ap_mode=coco101" in lines


def test_eval_table_column_count_is_stable():
    lines = render_eval_table(fixture_report()).splitlines()
    assert len(lines[0].split()) == 6
    # aggregate row plus all thirteen class rows, six cells each
    assert all(len(line.split()) == 6 for line in lines[1:15])


# ---------------------------------------------------------------------------
# structured round trip


def test_json_round_trip_preserves_everything():
    report = fixture_report()
    text = eval_report_to_json(report)
    again = eval_report_from_json(text)
    assert eval_report_to_json(again) == text
    assert again.settings == report.settings
    assert again.overall == report.overall
    assert again.per_class == report.per_class
    assert again.class_names == report.class_names
    assert np.array_equal(again.confusion, report.confusion)


def test_json_aggregate_row_is_data_not_a_sum():
    # the aggregate instance count is carried verbatim; it must not be
    # recomputed from the class rows even when they disagree
    report = fixture_report()
    assert report.overall.instances == 47118
    assert sum(row.instances for row in report.per_class) == 47095


def test_from_json_rejects_malformed_documents():
    with pytest.raises(ConfigError):
        eval_report_from_json("not json {")
    payload = json.loads(eval_report_to_json(tiny_report()))
    del payload["overall"]
    with pytest.raises(ConfigError):
        eval_report_from_json(json.dumps(payload))
    payload = json.loads(eval_report_to_json(tiny_report()))
    payload["confusion"]["matrix"] = [[0, 0], [0, 0]]
    with pytest.raises(ConfigError):
        eval_report_from_json(json.dumps(payload))


# ---------------------------------------------------------------------------
# csv and dispatch


def test_confusion_csv_layout():
    lines = render_confusion_csv(tiny_report()).splitlines()
    assert lines[0] == "predicted\\true,rider,cart,background"
    assert lines[1] == "rider,2,0,1"
    assert lines[2] == "cart,0,1,0"
    assert lines[3] == "background,0,0,0"


def test_render_report_dispatch():
    report = tiny_report()
    assert render_report(report, "table") == render_eval_table(report)
    assert render_report(report, "structured") == eval_report_to_json(report)
    assert render_report(report, "csv") == render_confusion_csv(report)
    assert render_report(report, "svg") == render_eval_svg(report)
    with pytest.raises(UnknownFormat):
        render_report(report, "pdf")


def test_eval_svg_bars_carry_values():
    svg = render_eval_svg(fixture_report())
    assert svg.count("data-value=") == 13
    assert 'data-value="0.968"' in svg  # auto-rickshaw mAP50
    assert 'data-value="-"' in svg  # the class with no ground truth
    assert svg.startswith("<svg ")


# ---------------------------------------------------------------------------
# benchmark rendering


def test_timings_csv():
    records = [
        TimingRecord("im0", 0.2, 22.4, 0.7),
        TimingRecord("im1", 0.25, 21.0, 0.65),
    ]
    lines = render_timings_csv(records).splitlines()
    assert lines[0] == "image_id,preprocess_ms,inference_ms,postprocess_ms"
    assert lines[1] == "im0,0.200,22.400,0.700"
    assert lines[2] == "im1,0.250,21.000,0.650"


def test_bench_summary_stage_rows():
    records = [TimingRecord(f"im{i}", 0.2, 22.4, 0.7) for i in range(5)]
    text = render_bench_summary(summarize_timings(records))
    lines = collapsed_lines(text)
    assert lines[0] == "stage mean median p95 min max"
    assert lines[1] == "preprocess 0.2 ms 0.2 ms 0.2 ms 0.2 ms 0.2 ms"
    assert lines[2] == "inference 22.4 ms 22.4 ms 22.4 ms 22.4 ms 22.4 ms"
    assert lines[3] == "postprocess 0.7 ms 0.7 ms 0.7 ms 0.7 ms 0.7 ms"
    assert lines[-1] == "samples=5"


# ---------------------------------------------------------------------------
# dataset analysis rendering


def small_gt():
    taxonomy = ClassTaxonomy.default()
    images = {
        "im0": ImageAnnotations(
            "im0",
            None,
            [(0, NormBox(0.5, 0.5, 0.1, 0.1)), (0, NormBox(0.25, 0.25, 0.1, 0.1))],
        ),
        "im1": ImageAnnotations("im1", None, [(2, NormBox(0.5, 0.5, 0.9, 0.9))]),
        "im2": ImageAnnotations("im2", None, []),
    }
    return GroundTruthSet(taxonomy=taxonomy, images=images)


def test_stats_json_shape():
    gt = small_gt()
    stats = compute_stats(gt)
    payload = json.loads(stats_to_json(stats, gt.taxonomy.names))
    assert payload["image_count"] == 3
    assert payload["total_instances"] == 3
    assert payload["class_counts"]["auto-rickshaw"] == 2
    assert payload["class_counts"]["bus"] == 1
    assert payload["objects_per_image"] == {"0": 1, "1": 1, "2": 1}
    assert payload["size_hist_bins"] == 64
    # identical input renders identical bytes
    assert stats_to_json(stats, gt.taxonomy.names) == stats_to_json(
        compute_stats(gt), gt.taxonomy.names
    )


def test_class_frequency_svg():
    gt = small_gt()
    svg = render_class_frequency_svg(compute_stats(gt), gt.taxonomy.names)
    assert svg.count("<rect") == 13
    assert 'data-value="2"' in svg
    assert 'data-value="1"' in svg
    assert "auto-rickshaw" in svg


def test_size_heatmap_svg_draws_occupied_cells_only():
    gt = small_gt()
    stats = compute_stats(gt)
    svg = render_size_heatmap_svg(stats)
    assert svg.count("data-count=") == int(np.count_nonzero(stats.size_hist))
    assert 'data-count="2"' in svg  # the two same-sized boxes share a cell


def test_render_diagnostics():
    assert render_diagnostics([]) == "0 findings\n"
    one = [Diagnostic("rare-class", "class train has 1 instance")]
    assert render_diagnostics(one) == "1 finding\nrare-class: class train has 1 instance\n"
    two = one + [Diagnostic("empty-image", "no boxes", image_id="im7")]
    text = render_diagnostics(two)
    assert text.startswith("2 findings\n")
    assert "empty-image: no boxes [im7]" in text
