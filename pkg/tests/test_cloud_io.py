"""Text cloud files and manifests: round trips and parse errors."""

import numpy as np
import pytest

from pagnet.cloud_io import (
    CloudParseError,
    load_manifest_clouds,
    read_cloud,
    read_manifest,
    write_cloud,
    write_manifest,
)
from pagnet.geometry import PointCloud
from pagnet.shapes import generate_shapes


def test_minimal_two_point_file(tmp_path):
    path = tmp_path / "two.txt"
    path.write_text("0 0 0\n1 0 0\n")
    cloud = read_cloud(path)
    assert cloud.n == 2
    assert cloud.normals is None and cloud.labels is None
    assert np.array_equal(cloud.positions, [[0, 0, 0], [1, 0, 0]])


def test_seven_column_row_parses_everything(tmp_path):
    path = tmp_path / "full.txt"
    path.write_text("0.5 -1 2 1 0 0 3\n")
    cloud = read_cloud(path)
    assert np.array_equal(cloud.positions[0], np.float32([0.5, -1, 2]))
    assert np.array_equal(cloud.normals[0], np.float32([1, 0, 0]))
    assert cloud.labels[0] == 3


def test_comments_and_blank_lines_skipped(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# header\n\n1 2 3  # trailing comment\n# again\n4 5 6\n")
    assert read_cloud(path).n == 2


def test_round_trip_is_lossless_for_float32(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(20):
        cloud = generate_shapes("two_part", 64, noise_std=0.01, rng=rng)
        path = tmp_path / f"cloud_{i}.txt"
        write_cloud(path, cloud)
        back = read_cloud(path)
        assert np.array_equal(back.positions, cloud.positions)
        assert np.array_equal(back.normals, cloud.normals)
        assert np.array_equal(back.labels, cloud.labels)


def test_round_trip_positions_only(tmp_path):
    cloud = PointCloud(np.random.default_rng(1).standard_normal((16, 3)).astype(np.float32))
    path = tmp_path / "p.txt"
    write_cloud(path, cloud)
    back = read_cloud(path)
    assert np.array_equal(back.positions, cloud.positions)
    assert back.normals is None and back.labels is None


def test_parse_errors_carry_line_numbers(tmp_path):
    ragged = tmp_path / "ragged.txt"
    ragged.write_text("1 2 3\n4 5\n")
    with pytest.raises(CloudParseError, match=r"ragged\.txt:2.*ragged row"):
        read_cloud(ragged)

    bad_number = tmp_path / "bad.txt"
    bad_number.write_text("1 2 3\n4 five 6\n")
    with pytest.raises(CloudParseError, match=r"bad\.txt:2.*bad number 'five'"):
        read_cloud(bad_number)

    bad_label = tmp_path / "label.txt"
    bad_label.write_text("1 2 3 0.5\n")
    with pytest.raises(CloudParseError, match=r"label\.txt:1.*bad label"):
        read_cloud(bad_label)

    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing\n")
    with pytest.raises(CloudParseError, match="empty cloud file"):
        read_cloud(empty)

    wide = tmp_path / "wide.txt"
    wide.write_text("1 2 3 4 5\n")
    with pytest.raises(CloudParseError, match=r"wide\.txt:1.*5 columns"):
        read_cloud(wide)


def test_manifest_round_trip(tmp_path):
    paths = []
    for i in range(4):
        cloud = generate_shapes("sphere", 32, rng=np.random.default_rng(i))
        path = tmp_path / f"c{i}.txt"
        write_cloud(path, cloud)
        paths.append(path)
    manifest_path = tmp_path / "data.manifest"
    write_manifest(manifest_path, [(p, i % 2) for i, p in enumerate(paths)], split="test")
    manifest = read_manifest(manifest_path)
    assert manifest.split == "test"
    assert not manifest.is_segmentation
    assert manifest.class_ids() == [0, 1, 0, 1]
    pairs = load_manifest_clouds(manifest)
    assert len(pairs) == 4
    assert pairs[0][0].n == 32 and pairs[0][1] == 0


def test_segmentation_manifest(tmp_path):
    cloud = generate_shapes("two_part", 64, rng=np.random.default_rng(0))
    cloud_path = tmp_path / "seg.txt"
    write_cloud(cloud_path, cloud)
    manifest_path = tmp_path / "seg.manifest"
    write_manifest(manifest_path, [(cloud_path, "seg")])
    manifest = read_manifest(manifest_path)
    assert manifest.is_segmentation
    clouds = load_manifest_clouds(manifest)
    assert clouds[0].labels is not None


def test_manifest_errors(tmp_path):
    no_tab = tmp_path / "a.manifest"
    no_tab.write_text("cloud.txt 1\n")
    with pytest.raises(CloudParseError, match="path<TAB>label"):
        read_manifest(no_tab)

    bad_label = tmp_path / "b.manifest"
    bad_label.write_text("cloud.txt\tnope\n")
    with pytest.raises(CloudParseError, match="integer"):
        read_manifest(bad_label)

    gap = tmp_path / "c.manifest"
    gap.write_text("a.txt\t0\nb.txt\t2\n")
    with pytest.raises(CloudParseError, match="contiguous"):
        read_manifest(gap)

    mixed = tmp_path / "d.manifest"
    mixed.write_text("a.txt\t0\nb.txt\tseg\n")
    with pytest.raises(CloudParseError, match="mixes"):
        read_manifest(mixed)

    empty = tmp_path / "e.manifest"
    empty.write_text("# split: train\n")
    with pytest.raises(CloudParseError, match="empty manifest"):
        read_manifest(empty)
