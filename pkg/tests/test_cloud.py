"""Point-cloud containers, file I/O, and normalization.

normalize_cloud centers on the centroid and divides by the largest absolute
coordinate after centering, so the result always fits in [-1, 1]^3 and at
least one coordinate touches +/-1 (unless the cloud is a single point, which
collapses to the origin).
"""

from __future__ import annotations

import numpy as np
import pytest

from cloudmark.cloud import (
    PointCloud,
    PointLabels,
    load_labels,
    load_point_cloud,
    normalize_cloud,
    save_labels,
    save_point_cloud,
)
from cloudmark.errors import DataIOError, ValidationError

# ── Containers ──


class TestPointCloud:
    def test_shape_and_dtype(self):
        pc = PointCloud(np.array([[1, 2, 3], [4, 5, 6]], dtype=np.int32))
        assert pc.points.dtype == np.float64
        assert pc.points.shape == (2, 3)
        assert pc.n == 2

    def test_rejects_bad_shape(self):
        with pytest.raises(ValidationError):
            PointCloud(np.zeros((4, 2)))
        with pytest.raises(ValidationError):
            PointCloud(np.zeros((0, 3)))

    def test_rejects_nonfinite(self):
        bad = np.array([[0.0, 0.0, np.nan]])
        with pytest.raises(ValidationError):
            PointCloud(bad)
        bad = np.array([[0.0, np.inf, 0.0]])
        with pytest.raises(ValidationError):
            PointCloud(bad)

    def test_readonly(self):
        pc = PointCloud(np.zeros((3, 3)))
        with pytest.raises(ValueError):
            pc.points[0, 0] = 1.0


class TestPointLabels:
    def test_values_restricted(self):
        PointLabels(np.array([0, 1, 1, 0]))
        with pytest.raises(ValidationError):
            PointLabels(np.array([0, 2]))
        with pytest.raises(ValidationError):
            PointLabels(np.array([-1, 0]))

    def test_region_ids_must_match_labels(self):
        # region id 0 means background, so it must coincide with label 0.
        PointLabels(np.array([0, 1, 1]), region_ids=np.array([0, 1, 1]))
        with pytest.raises(ValidationError):
            PointLabels(np.array([0, 1]), region_ids=np.array([1, 1]))
        with pytest.raises(ValidationError):
            PointLabels(np.array([0, 1]), region_ids=np.array([0, 0]))

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            PointLabels(np.array([0, 1]), region_ids=np.array([0, 1, 1]))


# ── XYZ round trip ──


class TestXYZ:
    def test_round_trip(self, tmp_path):
        pts = np.array([[0.1, -2.5, 3e-8], [1.0, 2.0, 3.0]])
        path = tmp_path / "c.xyz"
        save_point_cloud(path, PointCloud(pts))
        back = load_point_cloud(path)
        np.testing.assert_array_equal(back.points, pts)

    def test_comments_and_blanks(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("# header\n\n0 0 0\n# mid\n1 2 3\n")
        pc = load_point_cloud(path)
        assert pc.n == 2
        np.testing.assert_array_equal(pc.points[1], [1.0, 2.0, 3.0])

    def test_extra_columns_rejected(self, tmp_path):
        # the format is strict coordinate triples, nothing else per line
        path = tmp_path / "c.xyz"
        path.write_text("1 2 3 255 0 0\n")
        with pytest.raises(DataIOError, match="line 1"):
            load_point_cloud(path)

    def test_malformed_line_reports_position(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("0 0 0\n1 oops 2\n")
        with pytest.raises(DataIOError, match="line 2"):
            load_point_cloud(path)

    def test_too_few_columns(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("1 2\n")
        with pytest.raises(DataIOError, match="line 1"):
            load_point_cloud(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("# nothing\n")
        with pytest.raises(DataIOError):
            load_point_cloud(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataIOError):
            load_point_cloud(tmp_path / "absent.xyz")


# ── PLY subset ──

PLY_OK = """ply
format ascii 1.0
element vertex 2
property float x
property float y
property float z
end_header
0.5 0.25 -1
1 2 3
"""


class TestPLY:
    def test_basic(self, tmp_path):
        path = tmp_path / "c.ply"
        path.write_text(PLY_OK)
        pc = load_point_cloud(path)
        np.testing.assert_array_equal(pc.points, [[0.5, 0.25, -1.0], [1.0, 2.0, 3.0]])

    def test_extra_properties_rejected(self, tmp_path):
        # the supported subset is float x, y, z and nothing else
        text = PLY_OK.replace(
            "property float z\n", "property float z\nproperty uchar red\n"
        )
        path = tmp_path / "c.ply"
        path.write_text(text)
        with pytest.raises(DataIOError, match="property"):
            load_point_cloud(path)

    def test_float_synonym_types(self, tmp_path):
        text = PLY_OK.replace("property float x", "property float32 x").replace(
            "property float y", "property double y"
        )
        path = tmp_path / "c.ply"
        path.write_text(text)
        pc = load_point_cloud(path)
        np.testing.assert_array_equal(pc.points[1], [1.0, 2.0, 3.0])

    def test_binary_rejected(self, tmp_path):
        path = tmp_path / "c.ply"
        path.write_text(PLY_OK.replace("format ascii 1.0", "format binary_little_endian 1.0"))
        with pytest.raises(DataIOError, match="ASCII"):
            load_point_cloud(path)

    def test_vertex_count_mismatch(self, tmp_path):
        path = tmp_path / "c.ply"
        path.write_text(PLY_OK.replace("element vertex 2", "element vertex 3"))
        with pytest.raises(DataIOError):
            load_point_cloud(path)


# ── Labels ──


class TestLabelsIO:
    def test_one_column(self, tmp_path):
        path = tmp_path / "l.txt"
        path.write_text("0\n1\n1\n")
        lab = load_labels(path, 3)
        np.testing.assert_array_equal(lab.labels, [0, 1, 1])
        assert lab.region_ids is None

    def test_two_columns(self, tmp_path):
        path = tmp_path / "l.txt"
        path.write_text("0 0\n1 2\n1 2\n")
        lab = load_labels(path, 3)
        np.testing.assert_array_equal(lab.region_ids, [0, 2, 2])

    def test_round_trip(self, tmp_path):
        lab = PointLabels(np.array([0, 1, 0, 1]), region_ids=np.array([0, 3, 0, 1]))
        path = tmp_path / "l.txt"
        save_labels(path, lab)
        back = load_labels(path, 4)
        np.testing.assert_array_equal(back.labels, lab.labels)
        np.testing.assert_array_equal(back.region_ids, lab.region_ids)

    def test_bad_value(self, tmp_path):
        path = tmp_path / "l.txt"
        path.write_text("0\n7\n")
        with pytest.raises(DataIOError):
            load_labels(path, 2)

    def test_count_mismatch(self, tmp_path):
        path = tmp_path / "l.txt"
        path.write_text("0\n1\n")
        with pytest.raises(DataIOError, match="expected 3"):
            load_labels(path, 3)


# ── Normalization ──


class TestNormalize:
    def test_centers_and_scales(self):
        # centroid = (1, 1, 1); after centering the max |coord| is 2
        # (from the point (3,1,1) -> (2,0,0)), so scale divides by 2.
        pts = np.array([[3.0, 1.0, 1.0], [-1.0, 1.0, 1.0], [1.0, 1.0, 1.0]])
        out = normalize_cloud(PointCloud(pts))
        np.testing.assert_allclose(out.points.mean(axis=0), 0.0, atol=1e-15)
        assert np.abs(out.points).max() == pytest.approx(1.0)
        np.testing.assert_allclose(out.points[0], [1.0, 0.0, 0.0])

    def test_bounded(self):
        rng = np.random.default_rng(3)
        pc = PointCloud(rng.normal(size=(50, 3)) * 40 + 7)
        out = normalize_cloud(pc)
        assert np.abs(out.points).max() <= 1.0 + 1e-12

    def test_single_point(self):
        out = normalize_cloud(PointCloud(np.array([[5.0, -2.0, 9.0]])))
        np.testing.assert_array_equal(out.points, [[0.0, 0.0, 0.0]])

    def test_degenerate_identical_points(self):
        out = normalize_cloud(PointCloud(np.array([[2.0, 2.0, 2.0], [2.0, 2.0, 2.0]])))
        np.testing.assert_array_equal(out.points, np.zeros((2, 3)))

    def test_idempotent_when_normalized(self):
        pts = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        out = normalize_cloud(PointCloud(pts))
        np.testing.assert_allclose(out.points, pts, atol=1e-15)
