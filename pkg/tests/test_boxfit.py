import math

import numpy as np
import pytest

from psa_forge.boxfit import (
    MIN_BOX_DIM,
    FilterParams,
    PipelineParams,
    commonsense_filter,
    generate_pseudo_boxes,
    lshape_fit,
)
from psa_forge.rng import SeededRng
from psa_forge.synthetic import make_scene, sample_box_surface
from psa_forge.types import Box3D, GroundModel, GroundPlane, wrap_half_pi


def _rect_perimeter(dx, dy, n_per_edge=25, z_range=(0.0, 1.5), rng=None):
    """Points on a dx-by-dy rectangle outline, centered at the origin."""
    t = np.linspace(-0.5, 0.5, n_per_edge)
    edges = [
        np.column_stack([t * dx, np.full(n_per_edge, dy / 2)]),
        np.column_stack([t * dx, np.full(n_per_edge, -dy / 2)]),
        np.column_stack([np.full(n_per_edge, dx / 2), t * dy]),
        np.column_stack([np.full(n_per_edge, -dx / 2), t * dy]),
    ]
    xy = np.concatenate(edges)
    if rng is not None:
        xy = xy + rng.normal(0, 0.01, xy.shape)
    z = np.linspace(z_range[0], z_range[1], len(xy))
    return np.column_stack([xy, z])


def _rotate_z(pts, theta):
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    return pts @ rot.T


def _heading_diff_deg(a, b):
    """Angular difference modulo the 90-degree rectangle ambiguity."""
    d = abs(a - b) % (math.pi / 2)
    return math.degrees(min(d, math.pi / 2 - d))


def test_axis_aligned_rectangle():
    pts = _rect_perimeter(4.0, 2.0)
    box = lshape_fit(pts)
    assert abs(box.cx) < 1e-9 and abs(box.cy) < 1e-9
    assert abs(box.dx - 4.0) < 1e-9
    assert abs(box.dy - 2.0) < 1e-9
    assert abs(box.dz - 1.5) < 1e-9
    assert abs(box.cz - 0.75) < 1e-9
    assert _heading_diff_deg(box.heading, 0.0) < 1e-6


def test_rotated_rectangle_matches_rotated_fit():
    # Oracle: rotating the input must rotate the axis-aligned fit.
    pts = _rect_perimeter(4.0, 2.0)
    base = lshape_fit(pts)
    theta = math.pi / 6
    box = lshape_fit(_rotate_z(pts, theta))
    assert _heading_diff_deg(box.heading, base.heading + theta) < 1e-3
    assert abs(box.dx - base.dx) < 1e-6
    assert abs(box.dy - base.dy) < 1e-6


def test_collinear_fallback():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    box = lshape_fit(pts)
    assert box.heading == 0.0
    assert box.dy == MIN_BOX_DIM
    assert box.dz == MIN_BOX_DIM
    assert abs(box.dx - 2.0) < 1e-12


def test_too_few_points():
    with pytest.raises(ValueError):
        lshape_fit(np.zeros((2, 3)))


def test_containment_and_minimality():
    rng = SeededRng(5)
    for i in range(25):
        r = rng.child(i)
        dx = float(r.uniform(1.5, 5.0))
        dy = float(r.uniform(0.8, dx))
        theta = float(r.uniform(-math.pi / 2, math.pi / 2))
        pts = _rotate_z(_rect_perimeter(dx, dy, rng=r), theta)
        pts += np.array([*r.uniform(-10, 10, 2), 0.0])
        box = lshape_fit(pts)
        assert box.contains(pts, slack=1e-6).all()
        # shrinking any dimension by 1e-3 must exclude a point
        for field in ("dx", "dy", "dz"):
            import dataclasses

            smaller = dataclasses.replace(box, **{field: getattr(box, field) - 1e-3})
            assert not smaller.contains(pts, slack=0.0).all()


def test_equivariance_under_rigid_motion():
    rng = SeededRng(11)
    pts = _rect_perimeter(3.5, 1.8, rng=rng.child(0))
    base = lshape_fit(pts)
    for i in range(100):
        r = rng.child(1, i)
        theta = float(r.uniform(-math.pi, math.pi))
        t = np.array([*r.uniform(-15, 15, 2), float(r.uniform(-2, 2))])
        moved = _rotate_z(pts, theta) + t
        box = lshape_fit(moved)
        expect_center = _rotate_z(np.array([[base.cx, base.cy, base.cz]]), theta)[0] + t
        err = np.linalg.norm([box.cx - expect_center[0], box.cy - expect_center[1], box.cz - expect_center[2]])
        assert err <= 1e-6, f"center error {err} at motion {i}"
        assert _heading_diff_deg(box.heading, base.heading + theta) <= 0.02
        assert abs(box.dx - base.dx) <= 1e-6
        assert abs(box.dy - base.dy) <= 1e-6


def _flat_ground():
    return GroundModel.single(GroundPlane(0.0, 0.0, 1.0, 0.0), 0.25)


def test_filter_rejects_floating():
    box = Box3D(0, 0, 3.5, 1, 1, 1, 0.0, cluster_id=0)  # bottom at 3.0
    kept = commonsense_filter([box], _flat_ground(), FilterParams(max_bottom_above_ground_m=1.0))
    assert kept == []


def test_filter_rejects_underground():
    box = Box3D(0, 0, -0.8, 1, 1, 1, 0.0, cluster_id=0)  # top at -0.3
    kept = commonsense_filter([box], _flat_ground(), FilterParams(min_top_above_ground_m=0.3))
    assert kept == []


def test_filter_rejects_oversized():
    box = Box3D(0, 0, 2.5, 10, 10, 5, 0.0, cluster_id=0)  # volume 500
    kept, stats = commonsense_filter(
        [box], _flat_ground(), FilterParams(max_volume_m3=150.0), return_stats=True
    )
    assert kept == []
    assert stats["volume"] == 1


def test_filter_keeps_plausible():
    box = Box3D(5, 5, 0.9, 4, 2, 1.8, 0.3, cluster_id=0)
    assert commonsense_filter([box], _flat_ground()) == [box]


def test_filter_monotone_in_thresholds():
    rng = SeededRng(9)
    boxes = [
        Box3D(*rng.uniform(-10, 10, 2), float(rng.uniform(-1, 4)),
              *rng.uniform(0.5, 6, 3), float(wrap_half_pi(rng.uniform(-2, 2))), cluster_id=i)
        for i in range(30)
    ]
    tight = FilterParams(max_volume_m3=20, max_bottom_above_ground_m=0.4, min_top_above_ground_m=0.6)
    loose = FilterParams(max_volume_m3=80, max_bottom_above_ground_m=1.2, min_top_above_ground_m=0.2)
    kept_tight = {b.cluster_id for b in commonsense_filter(boxes, _flat_ground(), tight)}
    kept_loose = {b.cluster_id for b in commonsense_filter(boxes, _flat_ground(), loose)}
    assert kept_tight <= kept_loose


def test_generate_pseudo_boxes_on_synthetic_scene():
    rng = SeededRng(77)
    scene = make_scene(rng.child(0), n_objects=(3, 3))
    labels, boxes = generate_pseudo_boxes(scene.cloud, rng.child(1))
    assert len(boxes) == 3
    assert set(np.unique(labels[labels >= 0]).tolist()) == {0, 1, 2}
    for box in boxes:
        pts = scene.cloud.xyz[labels == box.cluster_id]
        assert box.contains(pts, slack=1e-6).all()


def test_generate_pseudo_boxes_small_object_dropped():
    rng = SeededRng(78)
    scene = make_scene(rng.child(0), n_objects=(2, 2))
    # graft a 5-point object far from everything
    tiny_box = Box3D(30.0, 30.0, -1.3, 1.0, 1.0, 1.0, 0.0, cluster_id=99)
    tiny = sample_box_surface(rng.child(1), tiny_box, 5)
    cloud = scene.cloud
    import numpy as _np

    from psa_forge.types import PointCloud

    merged = PointCloud(
        "m",
        _np.concatenate([cloud.xyz, tiny]),
        _np.concatenate([cloud.intensity, _np.zeros(5)]),
    )
    labels, boxes = generate_pseudo_boxes(merged, rng.child(2))
    assert len(boxes) == 2  # the 5-point object cannot reach min cluster size 20
    assert (labels[-5:] == -1).all()


def test_generate_pseudo_boxes_empty_cloud():
    from psa_forge.types import PointCloud

    with pytest.raises(ValueError):
        generate_pseudo_boxes(PointCloud("e", np.zeros((0, 3)), np.zeros(0)), SeededRng(0))


def test_generate_pseudo_boxes_all_ground():
    rng = SeededRng(79)
    from psa_forge.synthetic import sample_plane_points
    from psa_forge.types import PointCloud

    xyz = sample_plane_points(rng.child(0), 800)
    cloud = PointCloud("g", xyz, np.zeros(len(xyz)))
    labels, boxes = generate_pseudo_boxes(cloud, rng.child(1))
    assert boxes == []
    assert (labels == -1).all()
