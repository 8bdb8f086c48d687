import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psa_forge.scanio import (
    CacheError,
    MalformedScanError,
    ProfileError,
    default_profiles,
    load_lidar_profiles,
    read_frame_cache,
    read_scan,
    save_lidar_profiles,
    write_frame_cache,
    write_scan,
)
from psa_forge.types import Box3D, PointCloud


def test_read_scan_decodes_quadruples(tmp_path):
    path = tmp_path / "frame0.bin"
    path.write_bytes(struct.pack("<8f", 1, 2, 3, 0.5, 4, 5, 6, 0.25))
    cloud = read_scan(path)
    assert cloud.frame_id == "frame0"
    assert len(cloud) == 2
    np.testing.assert_allclose(cloud.xyz, [[1, 2, 3], [4, 5, 6]])
    np.testing.assert_allclose(cloud.intensity, [0.5, 0.25])
    assert cloud.labels is None


def test_read_scan_empty_file(tmp_path):
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    assert len(read_scan(path)) == 0


def test_read_scan_bad_length(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x00" * 17)
    with pytest.raises(MalformedScanError):
        read_scan(path)


def test_read_scan_normalizes_intensity(tmp_path):
    path = tmp_path / "hot.bin"
    path.write_bytes(struct.pack("<8f", 0, 0, 1, 100.0, 0, 1, 0, 50.0))
    cloud = read_scan(path)
    np.testing.assert_allclose(cloud.intensity, [1.0, 0.5])


def test_scan_round_trip_byte_exact(tmp_path, rng):
    xyz = rng.normal(0, 10, (257, 3))
    inten = rng.random(257)
    cloud = PointCloud("rt", xyz, inten)
    p1 = write_scan(tmp_path / "rt.bin", cloud)
    again = read_scan(p1)
    p2 = write_scan(tmp_path / "rt2.bin", again)
    assert p1.read_bytes() == p2.read_bytes()
    # order preserved
    np.testing.assert_array_equal(
        np.argsort(again.xyz[:, 0]), np.argsort(cloud.xyz.astype(np.float32)[:, 0].astype(float))
    )


def _boxes():
    return [
        Box3D(1.0, 2.0, 3.0, 4.0, 2.0, 1.5, 0.3, cluster_id=0),
        Box3D(-5.5, 0.25, -1.0, 1.0, 1.0, 1.0, -1.2, cluster_id=1),
        Box3D(9.0, 9.0, 0.0, 2.5, 1.1, 0.7, 1.234567891 - np.pi / 2, cluster_id=2),
    ]


def test_frame_cache_round_trip(tmp_path):
    labels = np.array([-1] * 40 + [0] * 30 + [1] * 20 + [2] * 10, dtype=np.int32)
    write_frame_cache("f1", _boxes(), labels, tmp_path)
    boxes, labels2 = read_frame_cache(tmp_path, "f1")
    assert boxes == _boxes()
    np.testing.assert_array_equal(labels, labels2)


def test_frame_cache_empty_boxes(tmp_path):
    labels = np.full(100, -1, dtype=np.int32)
    write_frame_cache("f2", [], labels, tmp_path)
    boxes, labels2 = read_frame_cache(tmp_path, "f2")
    assert boxes == []
    np.testing.assert_array_equal(labels2, labels)


def test_frame_cache_heading_precision(tmp_path):
    box = Box3D(0, 0, 0, 1, 1, 1, heading=1.234567891 - np.pi / 2, cluster_id=0)
    write_frame_cache("f3", [box], np.zeros(1, dtype=np.int32), tmp_path)
    boxes, _ = read_frame_cache(tmp_path, "f3")
    assert boxes[0].heading == box.heading  # exact round trip at 17 digits


def test_frame_cache_missing(tmp_path):
    with pytest.raises(CacheError):
        read_frame_cache(tmp_path, "nope")


def test_frame_cache_corrupt_names_line(tmp_path):
    write_frame_cache("f4", _boxes(), np.zeros(3, dtype=np.int32), tmp_path)
    box_file = tmp_path / "boxes" / "f4.txt"
    lines = box_file.read_text().splitlines()
    lines[1] = "0,not_a_number,0,0,1,1,1,0"
    box_file.write_text("\n".join(lines) + "\n")
    with pytest.raises(CacheError, match=":2:"):
        read_frame_cache(tmp_path, "f4")


@given(
    st.lists(
        st.tuples(
            st.floats(-100, 100),
            st.floats(-100, 100),
            st.floats(-10, 10),
            st.floats(0.05, 20),
            st.floats(0.05, 20),
            st.floats(0.05, 20),
            st.floats(-np.pi / 2, np.pi / 2, exclude_max=True),
        ),
        max_size=8,
    )
)
@settings(max_examples=50, deadline=None)
def test_frame_cache_round_trip_property(tmp_path_factory, rows):
    tmp = tmp_path_factory.mktemp("cache")
    boxes = [Box3D(*r[:6], heading=r[6], cluster_id=i) for i, r in enumerate(rows)]
    labels = np.arange(len(rows), dtype=np.int32)
    write_frame_cache("p", boxes, labels, tmp)
    back, _ = read_frame_cache(tmp, "p")
    assert back == boxes


def test_profiles_default_registry():
    profiles = default_profiles()
    assert list(profiles) == ["v32", "v64", "o64"]
    assert profiles["v32"].beams == 32
    assert profiles["v64"].beams == 64


def test_profiles_file_round_trip(tmp_path):
    path = save_lidar_profiles(tmp_path / "profiles.json", default_profiles())
    loaded = load_lidar_profiles(path)
    assert loaded == default_profiles()


def test_profiles_toy_entry_accepted(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(
        '[{"name": "toy", "H": 4, "W": 8, "f_up_deg": 10, "f_down_deg": -30, "max_range_m": 50}]'
    )
    cfg = load_lidar_profiles(path)["toy"]
    assert (cfg.beams, cfg.columns) == (4, 8)


def test_profiles_fov_invariant(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(
        '[{"name": "bad", "H": 4, "W": 8, "f_up_deg": -5, "f_down_deg": -5, "max_range_m": 50}]'
    )
    with pytest.raises(ProfileError):
        load_lidar_profiles(path)


def test_profiles_duplicate_name(tmp_path):
    entry = '{"name": "dup", "H": 4, "W": 8, "f_up_deg": 10, "f_down_deg": -30, "max_range_m": 50}'
    path = tmp_path / "p.json"
    path.write_text(f"[{entry}, {entry}]")
    with pytest.raises(ProfileError, match="duplicate"):
        load_lidar_profiles(path)


def test_profiles_unknown_field(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(
        '[{"name": "x", "H": 4, "W": 8, "f_up_deg": 10, "f_down_deg": -30, "max_range_m": 50, "bogus": 1}]'
    )
    with pytest.raises(ProfileError, match="unknown"):
        load_lidar_profiles(path)
