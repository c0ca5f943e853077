"""Label parsing, dataset scanning, statistics, and integrity checks."""

import numpy as np
import pytest
from PIL import Image

from roadbench.dataset import (
    DEFAULT_CLASS_NAMES,
    SIZE_HIST_BINS,
    ClassTaxonomy,
    GroundTruthSet,
    ImageAnnotations,
    canonical_class_name,
    compute_stats,
    find_image_files,
    format_label_line,
    integrity_report,
    parse_label_line,
    read_label_file,
    read_manifest,
    scan_dataset,
    write_label_file,
)
from roadbench.errors import (
    ClassOutOfRange,
    ConfigError,
    CoordOutOfRange,
    IoFailure,
    MalformedLine,
)
from roadbench.geometry import ImageDims, NormBox


def make_gt(boxes_by_image, taxonomy=None):
    gt = GroundTruthSet(taxonomy=taxonomy or ClassTaxonomy.default())
    for image_id, boxes in boxes_by_image.items():
        gt.images[image_id] = ImageAnnotations(image_id, ImageDims(416, 416), list(boxes))
    return gt


def write_png(path, width=32, height=24, value=128):
    Image.new("RGB", (width, height), (value, value, value)).save(path)


# -- taxonomy ---------------------------------------------------------------


def test_default_taxonomy_has_13_road_classes():
    tax = ClassTaxonomy.default()
    assert len(tax) == 13
    assert tax.names == DEFAULT_CLASS_NAMES
    assert tax.names[0] == "auto-rickshaw"
    assert tax.names[12] == "wheelchair"


def test_canonical_class_name_merges_separator_variants():
    assert canonical_class_name("Auto Rickshaw") == "auto-rickshaw"
    assert canonical_class_name("auto_rickshaw") == "auto-rickshaw"
    assert canonical_class_name("three  wheeler") == "three-wheeler"


def test_taxonomy_index_of_accepts_spelling_variants():
    tax = ClassTaxonomy.default()
    assert tax.index_of("auto rickshaw") == 0
    assert tax.index_of("Three Wheeler") == 9
    with pytest.raises(KeyError):
        tax.index_of("spaceship")


def test_taxonomy_rejects_duplicates_even_across_variants():
    with pytest.raises(ConfigError):
        ClassTaxonomy(("car", "Car"))
    with pytest.raises(ConfigError):
        ClassTaxonomy(("auto rickshaw", "auto-rickshaw"))


def test_taxonomy_file_round_trip(tmp_path):
    tax = ClassTaxonomy(("car", "bus", "person"))
    tax.to_file(tmp_path / "names.txt")
    assert ClassTaxonomy.from_file(tmp_path / "names.txt") == tax


# -- label line grammar -----------------------------------------------------


def test_parse_label_line_basic():
    assert parse_label_line("7 0.5 0.5 0.1 0.2", 13) == (7, NormBox(0.5, 0.5, 0.1, 0.2))


def test_parse_label_line_class_at_taxonomy_size():
    with pytest.raises(ClassOutOfRange):
        parse_label_line("13 0.5 0.5 0.1 0.2", 13)


def test_parse_label_line_zero_width():
    with pytest.raises(CoordOutOfRange):
        parse_label_line("2 0.5 0.5 0 0.2", 13)


def test_parse_label_line_malformed():
    with pytest.raises(MalformedLine):
        parse_label_line("2 0.5 0.5 0.1", 13)
    with pytest.raises(MalformedLine):
        parse_label_line("2 0.5 0.5 0.1 0.2 0.9", 13)
    with pytest.raises(MalformedLine):
        parse_label_line("x 0.5 0.5 0.1 0.2", 13)
    with pytest.raises(MalformedLine):
        parse_label_line("2 0.5 abc 0.1 0.2", 13)


def test_parse_label_line_out_of_range_coord():
    with pytest.raises(CoordOutOfRange):
        parse_label_line("2 1.5 0.5 0.1 0.2", 13)
    with pytest.raises(ClassOutOfRange):
        parse_label_line("-1 0.5 0.5 0.1 0.2", 13)


def test_format_label_line_six_decimals():
    line = format_label_line(3, NormBox(0.5, 0.25, 0.125, 1.0))
    assert line == "3 0.500000 0.250000 0.125000 1.000000"


def test_label_line_round_trip_property():
    rng = np.random.default_rng(5)
    for _ in range(200):
        w, h = rng.uniform(0.01, 1.0, size=2)
        box = NormBox(rng.uniform(0, 1), rng.uniform(0, 1), w, h)
        class_index = int(rng.integers(0, 13))
        parsed_class, parsed = parse_label_line(format_label_line(class_index, box), 13)
        assert parsed_class == class_index
        # formatting quantizes to 1e-6, so round-trip is exact at that grain
        assert abs(parsed.cx - box.cx) <= 5e-7
        assert abs(parsed.cy - box.cy) <= 5e-7
        assert abs(parsed.w - box.w) <= 5e-7 + 1e-12
        assert abs(parsed.h - box.h) <= 5e-7 + 1e-12


def test_read_label_file_skips_and_reports_bad_lines(tmp_path):
    path = tmp_path / "img.txt"
    path.write_text("0 0.5 0.5 0.1 0.1\nbogus\n1 0.2 0.2 0.05 0.05\n\n2 0.9 0.9 0.05 0.05\n")
    boxes, diags = read_label_file(path, 13, "img")
    assert len(boxes) == 3
    assert len(diags) == 1
    assert diags[0].line_no == 2


def test_write_label_file_round_trip(tmp_path):
    boxes = [(0, NormBox(0.5, 0.5, 0.25, 0.25)), (5, NormBox(0.1, 0.9, 0.2, 0.2))]
    path = tmp_path / "img.txt"
    write_label_file(path, boxes)
    parsed, diags = read_label_file(path, 13)
    assert diags == []
    assert parsed == boxes


# -- manifest and scanning --------------------------------------------------


def test_read_manifest(tmp_path):
    path = tmp_path / "dims.txt"
    path.write_text("a 640 480\nb 1920 1080\n")
    dims = read_manifest(path)
    assert dims == {"a": ImageDims(640, 480), "b": ImageDims(1920, 1080)}
    (tmp_path / "bad.txt").write_text("a 640\n")
    with pytest.raises(MalformedLine):
        read_manifest(tmp_path / "bad.txt")


def test_scan_dataset_counts(tmp_path):
    images = tmp_path / "images"
    labels = tmp_path / "labels"
    images.mkdir()
    labels.mkdir()
    per_image = {"a": 2, "b": 0, "c": 5}
    for image_id, n in per_image.items():
        write_png(images / f"{image_id}.png")
        lines = [f"{i % 13} 0.5 0.5 0.1 0.1" for i in range(n)]
        (labels / f"{image_id}.txt").write_text("".join(l + "\n" for l in lines))
    gt, diags = scan_dataset(images, labels, ClassTaxonomy.default())
    assert gt.image_ids() == ["a", "b", "c"]
    assert gt.total_instances() == 7
    assert diags == []
    assert gt.images["a"].dims == ImageDims(32, 24)


def test_scan_dataset_missing_label_and_orphan(tmp_path):
    images = tmp_path / "images"
    labels = tmp_path / "labels"
    images.mkdir()
    labels.mkdir()
    write_png(images / "present.png")
    (labels / "ghost.txt").write_text("0 0.5 0.5 0.1 0.1\n")
    gt, diags = scan_dataset(images, labels, ClassTaxonomy.default())
    assert gt.image_ids() == ["present"]
    assert gt.images["present"].boxes == []
    codes = sorted(d.code for d in diags)
    assert codes == ["MissingLabelFile", "OrphanLabelFile"]


def test_scan_dataset_bad_line_diagnostic(tmp_path):
    labels = tmp_path / "labels"
    labels.mkdir()
    (labels / "x.txt").write_text(
        "0 0.5 0.5 0.1 0.1\n0 2.0 0.5 0.1 0.1\n1 0.4 0.4 0.1 0.1\n9 0.6 0.6 0.1 0.1\n"
    )
    gt, diags = scan_dataset(None, labels, ClassTaxonomy.default())
    assert len(gt.images["x"].boxes) == 3
    assert len(diags) == 1
    assert diags[0].image_id == "x"


def test_scan_dataset_label_only_uses_manifest(tmp_path):
    labels = tmp_path / "labels"
    labels.mkdir()
    (labels / "x.txt").write_text("0 0.5 0.5 0.1 0.1\n")
    gt, _ = scan_dataset(None, labels, ClassTaxonomy.default(), {"x": ImageDims(1280, 720)})
    assert gt.images["x"].dims == ImageDims(1280, 720)


def test_scan_dataset_missing_dir():
    with pytest.raises(IoFailure):
        scan_dataset(None, "/nonexistent/labels", ClassTaxonomy.default())


def test_find_image_files_filters_suffixes(tmp_path):
    write_png(tmp_path / "a.png")
    write_png(tmp_path / "b.jpg")
    (tmp_path / "notes.txt").write_text("ignore me")
    found = find_image_files(tmp_path)
    assert sorted(found) == ["a", "b"]


# -- statistics -------------------------------------------------------------


def test_compute_stats_empty():
    stats = compute_stats(GroundTruthSet(taxonomy=ClassTaxonomy.default()))
    assert stats.image_count == 0
    assert stats.total_instances == 0
    assert stats.class_counts == [0] * 13
    assert stats.size_hist.shape == (SIZE_HIST_BINS, SIZE_HIST_BINS)
    assert stats.size_hist.sum() == 0


def test_compute_stats_counts_and_mass():
    boxes = [(0, NormBox(0.5, 0.5, 0.1, 0.1)), (0, NormBox(0.3, 0.3, 0.2, 0.2))]
    gt = make_gt({f"img{i}": boxes for i in range(10)})
    stats = compute_stats(gt)
    assert stats.image_count == 10
    assert stats.class_counts[0] == 20
    assert sum(stats.class_counts) == 20
    # histogram mass equals total instances (conservation)
    assert int(stats.size_hist.sum()) == 20
    assert stats.objects_per_image == {2: 10}


def test_size_histogram_bins_extremes():
    gt = make_gt({"a": [(0, NormBox(0.5, 0.5, 1.0, 1.0)), (1, NormBox(0.5, 0.5, 0.001, 0.001))]})
    stats = compute_stats(gt)
    last = SIZE_HIST_BINS - 1
    assert stats.size_hist[last, last] == 1  # full-frame box lands in the top bin
    assert stats.size_hist[0, 0] == 1


# -- integrity --------------------------------------------------------------


def test_integrity_clean_set_silent():
    gt = make_gt(
        {
            "a": [(i, NormBox((i + 1) / 14, 0.5, 0.05, 0.05)) for i in range(13)],
        }
    )
    # every class present once; rarity floor of 1 keeps them all quiet
    assert integrity_report(gt, rarity_threshold=1) == []


def test_integrity_duplicate_box():
    box = (3, NormBox(0.5, 0.5, 0.2, 0.2))
    gt = make_gt({"a": [box, box]})
    codes = [d.code for d in integrity_report(gt, rarity_threshold=0)]
    assert codes.count("DuplicateBox") == 1


def test_integrity_empty_image_and_rare_class():
    gt = make_gt({"a": [], "b": [(10, NormBox(0.5, 0.5, 0.2, 0.2))]})
    report = integrity_report(gt, rarity_threshold=10)
    codes = [d.code for d in report]
    assert "EmptyImage" in codes
    rare = [d for d in report if d.code == "RareClass"]
    # only classes that appear at all are flagged; absent classes are not noise
    assert len(rare) == 1
    assert "train" in rare[0].message


def test_integrity_box_leaving_frame():
    gt = make_gt({"a": [(0, NormBox(0.98, 0.5, 0.1, 0.1))]})
    codes = [d.code for d in integrity_report(gt, rarity_threshold=0)]
    assert "BoxOutsideFrame" in codes
