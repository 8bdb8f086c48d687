import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psa_forge.cluster import EPS_PRESETS, dbscan, filter_small_clusters, hdbscan
from psa_forge.rng import SeededRng

from conftest import assert_partitions_equal


# --- brute-force oracle ------------------------------------------------------


def dbscan_oracle(points, eps, min_pts):
    """O(n^2) reference: same semantics as the library implementation.

    Core points: >= min_pts neighbors within eps (self included). Clusters
    are connected components of core points; labels numbered by first core
    point; border points join their lowest-index core neighbor.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    within = d <= eps
    core = within.sum(axis=1) >= min_pts
    label = 0
    for i in range(n):
        if not core[i] or labels[i] >= 0:
            continue
        stack = [i]
        labels[i] = label
        while stack:
            j = stack.pop()
            for k in np.nonzero(within[j] & core)[0]:
                if labels[k] < 0:
                    labels[k] = label
                    stack.append(k)
        label += 1
    for i in range(n):
        if not core[i]:
            nbrs = np.nonzero(within[i] & core)[0]
            if len(nbrs):
                labels[i] = labels[nbrs.min()]
    return labels


def _random_instance(rng, n_max=200):
    kind = int(rng.integers(0, 3))
    n = int(rng.integers(5, n_max + 1))
    if kind == 0:
        return rng.uniform(-2, 2, (n, 3))
    if kind == 1:
        centers = rng.uniform(-5, 5, (max(1, n // 40), 3))
        pts = centers[rng.integers(0, len(centers), n)] + rng.normal(0, 0.15, (n, 3))
        return pts
    # mixture of a blob and scattered noise
    blob = rng.normal(0, 0.2, (n // 2, 3))
    noise = rng.uniform(-8, 8, (n - n // 2, 3))
    return np.concatenate([blob, noise])


# --- dbscan ------------------------------------------------------------------


def test_two_blobs_two_clusters(rng):
    a = rng.uniform(0, 0.18, (30, 3))
    b = rng.uniform(0, 0.18, (30, 3)) + 5.0
    pts = np.concatenate([a, b])
    labels = dbscan(pts, eps=0.2, min_pts=3)
    assert labels.max() == 1
    assert (labels >= 0).all()
    assert_partitions_equal(labels, dbscan_oracle(pts, 0.2, 3))


def test_isolated_point_is_noise():
    pts = np.array([[0.0, 0.0, 0.0]])
    assert dbscan(pts, eps=0.2, min_pts=2).tolist() == [-1]


def test_empty_input():
    assert dbscan(np.zeros((0, 3)), eps=0.2, min_pts=2).tolist() == []


def test_dbscan_matches_oracle_on_random_instances():
    rng = SeededRng(2024)
    for i in range(60):
        pts = _random_instance(rng.child(i))
        eps = float(rng.child(1000 + i).uniform(0.1, 0.8))
        min_pts = int(rng.child(2000 + i).integers(2, 8))
        got = dbscan(pts, eps, min_pts)
        want = dbscan_oracle(pts, eps, min_pts)
        assert_partitions_equal(got, want)


def test_dbscan_rigid_motion_invariant(rng):
    pts = _random_instance(rng.child(0), n_max=150)
    eps = 0.35
    # keep distances clear of the eps boundary so fp noise cannot flip edges
    d = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
    off = np.abs(d[d > 0] - eps).min()
    if off < 1e-6:
        eps += 2e-6
    theta = 0.7
    rot = np.array(
        [[np.cos(theta), -np.sin(theta), 0], [np.sin(theta), np.cos(theta), 0], [0, 0, 1]]
    )
    moved = pts @ rot.T + np.array([3.0, -2.0, 0.5])
    assert_partitions_equal(dbscan(pts, eps, 4), dbscan(moved, eps, 4))


def test_dbscan_label_compactness(rng):
    pts = _random_instance(rng.child(3))
    labels = dbscan(pts, 0.3, 3)
    ids = np.unique(labels[labels >= 0])
    np.testing.assert_array_equal(ids, np.arange(len(ids)))


# --- filter_small_clusters ---------------------------------------------------


def test_filter_drops_small_cluster():
    labels = np.array([0] * 19, dtype=np.int32)
    assert (filter_small_clusters(labels, 20) == -1).all()


def test_filter_boundary_inclusive():
    labels = np.array([0] * 20, dtype=np.int32)
    assert (filter_small_clusters(labels, 20) == 0).all()


def test_filter_recompacts():
    labels = np.array([0] * 25 + [1] * 5 + [2] * 30, dtype=np.int32)
    out = filter_small_clusters(labels, 20)
    assert out[:25].tolist() == [0] * 25
    assert out[25:30].tolist() == [-1] * 5
    assert out[30:].tolist() == [1] * 30


@given(st.lists(st.integers(min_value=-1, max_value=6), max_size=80), st.integers(1, 10))
@settings(max_examples=80, deadline=None)
def test_filter_idempotent(labels, min_size):
    once = filter_small_clusters(np.array(labels, dtype=np.int32), min_size)
    twice = filter_small_clusters(once, min_size)
    np.testing.assert_array_equal(once, twice)


# --- hdbscan -----------------------------------------------------------------


def _blob_instance(rng, n_blobs=2, blob_n=40, side=0.15, sep=5.0, noise_pts=0):
    parts = []
    for b in range(n_blobs):
        center = np.array([b * sep, 0.0, 0.0])
        parts.append(rng.uniform(0, side, (blob_n, 3)) + center)
    if noise_pts:
        parts.append(rng.uniform(-20, 20, (noise_pts, 3)) + np.array([0, 15.0, 0]))
    return np.concatenate(parts)


def test_hdbscan_two_blobs_match_dbscan(rng):
    pts = _blob_instance(rng.child(0))
    got = hdbscan(pts, min_cluster_size=20, selection_eps=0.3)
    want = dbscan(pts, eps=0.3, min_pts=20)
    assert got.max() == 1
    assert_partitions_equal(got, want)


def test_hdbscan_small_blob_all_noise(rng):
    pts = _blob_instance(rng.child(1), n_blobs=1, blob_n=19, noise_pts=5)
    labels = hdbscan(pts, min_cluster_size=20, selection_eps=0.3)
    assert (labels == -1).all()


def test_hdbscan_single_blob_single_cluster(rng):
    pts = _blob_instance(rng.child(2), n_blobs=1, blob_n=60)
    labels = hdbscan(pts, min_cluster_size=20, selection_eps=0.3)
    assert labels.max() == 0
    assert (labels == 0).all()
    assert_partitions_equal(labels, dbscan(pts, eps=0.3, min_pts=20))


def test_hdbscan_matches_dbscan_on_blob_instances():
    rng = SeededRng(777)
    for i in range(20):
        n_blobs = int(rng.child(i).integers(1, 4))
        pts = _blob_instance(rng.child(100 + i), n_blobs=n_blobs, blob_n=40)
        got = hdbscan(pts, min_cluster_size=20, selection_eps=0.3)
        want = dbscan(pts, eps=0.3, min_pts=20)
        assert_partitions_equal(got, want)


def test_hdbscan_min_cluster_size_enforced():
    rng = SeededRng(31)
    for i in range(10):
        pts = _blob_instance(rng.child(i), n_blobs=2, blob_n=25, noise_pts=8)
        labels = hdbscan(pts, min_cluster_size=20, selection_eps=0.3)
        ids, counts = np.unique(labels[labels >= 0], return_counts=True)
        assert (counts >= 20).all()


def test_hdbscan_empty_and_degenerate():
    assert hdbscan(np.zeros((0, 3)), 20, selection_eps=0.3).tolist() == []
    assert hdbscan(np.zeros((1, 3)), 20, selection_eps=0.3).tolist() == [-1]


def test_hdbscan_validates_args():
    with pytest.raises(ValueError):
        hdbscan(np.zeros((5, 3)), min_cluster_size=1, selection_eps=0.3)
    with pytest.raises(ValueError):
        hdbscan(np.zeros((5, 3)), min_cluster_size=5, selection_eps=0.0)


def test_eps_presets():
    assert EPS_PRESETS == {"waymo": 0.2, "nuscenes": 0.3, "semantickitti": 0.25}
