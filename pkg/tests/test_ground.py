import math

import numpy as np
import pytest

from psa_forge.ground import GroundParams, NoGroundError, fit_ground, ransac_plane, split_ground
from psa_forge.rng import SeededRng
from psa_forge.types import GroundModel, GroundPlane, PointCloud


def _plane_scene(rng, n_plane=1000, n_obj=200, coeffs=(0.0, 0.0, 1.0, 0.0), noise=0.01):
    """Known-plane oracle: points satisfying a*x+b*y+c*z+d=0 plus outliers."""
    a, b, c, d = coeffs
    xy = rng.uniform(-20, 20, (n_plane, 2))
    z = -(a * xy[:, 0] + b * xy[:, 1] + d) / c + rng.normal(0, noise, n_plane)
    plane_pts = np.column_stack([xy, z])
    oxy = rng.uniform(-20, 20, (n_obj, 2))
    oz = -(a * oxy[:, 0] + b * oxy[:, 1] + d) / c + rng.uniform(1, 3, n_obj)
    obj_pts = np.column_stack([oxy, oz])
    xyz = np.concatenate([plane_pts, obj_pts])
    return PointCloud("plane", xyz, np.zeros(len(xyz))), len(plane_pts)


def _angle_to_up(plane):
    return math.degrees(math.acos(min(1.0, plane.c)))


def test_recovers_z0_plane(rng):
    cloud, _ = _plane_scene(rng.child(0))
    model = fit_ground(cloud, rng.child(1))
    for plane in model.planes:
        assert _angle_to_up(plane) < 1.0
        assert abs(plane.d) < 0.05


def test_recovers_elevated_plane(rng):
    cloud, _ = _plane_scene(rng.child(0), coeffs=(0.0, 0.0, 1.0, -5.0), n_obj=0)
    model = fit_ground(cloud, rng.child(1))
    for plane in model.planes:
        assert _angle_to_up(plane) < 1.0
        assert abs(plane.d - (-5.0)) < 0.05


def test_recovers_tilted_plane(rng):
    coeffs = GroundPlane.from_coeffs(0.05, -0.08, 1.0, 2.0)
    cloud, _ = _plane_scene(rng.child(0), coeffs=(coeffs.a, coeffs.b, coeffs.c, coeffs.d))
    model = fit_ground(cloud, rng.child(1), GroundParams(zone_count=1))
    plane = model.planes[0]
    dot = plane.a * coeffs.a + plane.b * coeffs.b + plane.c * coeffs.c
    assert math.degrees(math.acos(min(1.0, dot))) < 1.0


def test_two_point_cloud_raises(rng):
    cloud = PointCloud("tiny", [[0, 0, 0], [1, 0, 0]], [0, 0])
    with pytest.raises(NoGroundError):
        fit_ground(cloud, rng)


def test_empty_cloud_raises(rng):
    with pytest.raises(NoGroundError):
        fit_ground(PointCloud("e", np.zeros((0, 3)), np.zeros(0)), rng)


def test_deterministic_under_seed(rng):
    cloud, _ = _plane_scene(rng.child(0))
    m1 = fit_ground(cloud, SeededRng(9))
    m2 = fit_ground(cloud, SeededRng(9))
    assert m1 == m2


def test_ransac_trace_monotone(rng):
    cloud, _ = _plane_scene(rng.child(0), n_plane=200, n_obj=50)
    _, _, trace = ransac_plane(
        cloud.xyz, np.arange(len(cloud)), rng.child(1), iterations=100, threshold=0.25
    )
    assert all(b >= a for a, b in zip(trace, trace[1:]))


def test_split_classifies_by_distance():
    plane = GroundPlane(0.0, 0.0, 1.0, 0.0)
    model = GroundModel.single(plane, inlier_threshold=0.25)
    cloud = PointCloud("s", [[0, 0, 0.0], [0, 0, 1.0], [5, 5, -0.2]], [0, 0, 0])
    g, ng = split_ground(cloud, model)
    assert g.tolist() == [0, 2]
    assert ng.tolist() == [1]


def test_split_empty_cloud():
    model = GroundModel.single(GroundPlane(0, 0, 1.0, 0.0), 0.25)
    g, ng = split_ground(PointCloud("e", np.zeros((0, 3)), np.zeros(0)), model)
    assert len(g) == 0 and len(ng) == 0


def test_split_partition_exhaustive_disjoint(rng):
    cloud, _ = _plane_scene(rng.child(0), n_plane=300, n_obj=100)
    model = fit_ground(cloud, rng.child(1))
    g, ng = split_ground(cloud, model)
    merged = np.sort(np.concatenate([g, ng]))
    np.testing.assert_array_equal(merged, np.arange(len(cloud)))


def test_synthetic_scene_classification_quality(rng):
    cloud, n_plane = _plane_scene(rng.child(0), n_plane=1500, n_obj=400)
    model = fit_ground(cloud, rng.child(1))
    g, ng = split_ground(cloud, model)
    plane_idx = np.arange(n_plane)
    obj_idx = np.arange(n_plane, len(cloud))
    # objects here are all >= 0.5 m above the plane by construction
    assert np.isin(plane_idx, g).mean() >= 0.99
    assert np.isin(obj_idx, ng).mean() >= 0.99
