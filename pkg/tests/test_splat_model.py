import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_cloud
from oracles import homogeneous_project
from splatgeom.cameras import (CameraModel, load_cameras_json, load_colmap_text, project_mean,
                               project_points)
from splatgeom.errors import (DegenerateRotation, MalformedHeader, NonFiniteValue,
                              TruncatedBody)
from splatgeom.splat_model import (SplatCloud, SplatRaw, activate, activate_cloud,
                                   aspect_ratios, parse_splat_ply, property_names, record_size,
                                   write_splat_ply)


def hand_built_ply(values, names):
    header = "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
    header += "".join(f"property float {n}\n" for n in names) + "end_header\n"
    return header.encode() + struct.pack("<" + "f" * len(names), *values)


def test_parse_empty():
    cloud = parse_splat_ply(write_splat_ply(SplatCloud.empty()))
    assert cloud.count == 0
    data = b"ply\nformat binary_little_endian 1.0\nelement vertex 0\n" + "".join(
        f"property float {n}\n" for n in property_names(False)).encode() + b"end_header\n"
    assert parse_splat_ply(data).count == 0


def test_parse_single_hand_built():
    names = property_names(False)
    vals = dict.fromkeys(names, 0.0)
    vals.update(x=1.0, y=2.0, z=3.0, rot_0=1.0)
    cloud = parse_splat_ply(hand_built_ply([vals[n] for n in names], names))
    s = cloud[0]
    assert cloud.count == 1
    assert s.position.tolist() == [1.0, 2.0, 3.0]
    assert s.log_scales.tolist() == [0.0, 0.0, 0.0]
    assert s.rotation.tolist() == [1.0, 0.0, 0.0, 0.0]
    assert s.opacity_logit == 0.0
    assert cloud.sh_rest is None


@pytest.mark.parametrize("with_rest", [True, False])
def test_round_trip_100(rng, with_rest):
    cloud = random_cloud(rng, 100, with_rest)
    data = write_splat_ply(cloud)
    back = parse_splat_ply(data)
    assert back == cloud
    assert write_splat_ply(back) == data


def test_single_splat_body_size(rng):
    for with_rest in (True, False):
        data = write_splat_ply(random_cloud(rng, 1, with_rest))
        body = data[data.index(b"end_header\n") + len(b"end_header\n"):]
        assert len(body) == record_size(with_rest)
    assert record_size(True) == 62 * 4
    assert record_size(False) == 17 * 4


def test_properties_in_any_order_and_extras_warn(rng):
    cloud = random_cloud(rng, 3, False)
    names = property_names(False)
    order = list(reversed(names)) + ["extra_prop"]
    body = np.zeros(3, dtype=[(n, "<f4") for n in order])
    data = write_splat_ply(cloud)
    ref = np.frombuffer(data[data.index(b"end_header\n") + 11:],
                        dtype=[(n, "<f4") for n in names])
    for n in names:
        body[n] = ref[n]
    header = "ply\nformat binary_little_endian 1.0\nelement vertex 3\n" + "".join(
        f"property float {n}\n" for n in order) + "end_header\n"
    with pytest.warns(UserWarning, match="extra_prop"):
        back = parse_splat_ply(header.encode() + body.tobytes())
    assert back == cloud


def test_errors(rng):
    data = write_splat_ply(random_cloud(rng, 4, False))
    with pytest.raises(TruncatedBody):
        parse_splat_ply(data[:-1])
    with pytest.raises(MalformedHeader):
        parse_splat_ply(data.replace(b"property float opacity\n", b""))
    with pytest.raises(MalformedHeader, match="binary_little_endian"):
        parse_splat_ply(data.replace(b"binary_little_endian", b"ascii"))
    with pytest.raises(MalformedHeader):
        parse_splat_ply(b"not a ply")

    names = property_names(False)
    bad = bytearray(data)
    start = data.index(b"end_header\n") + 11
    struct.pack_into("<f", bad, start + 2 * 4 * len(names), float("nan"))  # splat 2, x
    with pytest.raises(NonFiniteValue) as info:
        parse_splat_ply(bytes(bad))
    assert info.value.index == 2

    cloud = random_cloud(rng, 2, False)
    cloud.positions[1, 0] = np.inf
    with pytest.raises(NonFiniteValue):
        write_splat_ply(cloud)


def test_activate_identity():
    raw = SplatRaw(np.zeros(3), np.zeros(3), np.array([1.0, 0, 0, 0]), 0.0, np.zeros(3))
    g = activate(raw)
    np.testing.assert_array_equal(g.scales, [1, 1, 1])
    assert g.opacity == 0.5
    np.testing.assert_allclose(g.covariance, np.eye(3), atol=1e-15)


def test_activate_exp():
    raw = SplatRaw(np.zeros(3), np.array([math.log(2), math.log(2), 0]),
                   np.array([2.0, 0, 0, 0]), 0.0, np.zeros(3))
    np.testing.assert_allclose(activate(raw).scales, [2, 2, 1], rtol=1e-15)
    np.testing.assert_allclose(activate(raw).rotation, [1, 0, 0, 0])


def test_degenerate_rotation():
    raw = SplatRaw(np.zeros(3), np.zeros(3), np.zeros(4), 0.0, np.zeros(3))
    with pytest.raises(DegenerateRotation):
        activate(raw)


def test_covariance_spd_eigen_oracle():
    rng = np.random.default_rng(0)
    cloud = SplatCloud(rng.normal(size=(10_000, 3)), rng.uniform(-3, 1, (10_000, 3)),
                       rng.normal(size=(10_000, 4)), rng.normal(size=10_000),
                       np.zeros((10_000, 3)))
    act = activate_cloud(cloud)
    cov = act.covariances
    np.testing.assert_allclose(cov, np.swapaxes(cov, 1, 2), atol=1e-9)
    eig = np.linalg.eigvalsh(cov)
    assert (eig > 0).all()
    np.testing.assert_allclose(eig, np.sort(act.scales ** 2, axis=1), rtol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(act.rotations, axis=1), 1, atol=1e-6)
    assert ((act.opacities > 0) & (act.opacities < 1)).all()


@pytest.mark.parametrize("scales,expected", [
    ((2, 2, 1), (2, 2)), ((1, 1, 1), (1, 1)), ((4, 1, 1), (4, 1))])
def test_aspect_ratio_examples(scales, expected):
    assert aspect_ratios(np.array(scales, float)) == expected


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.permutations([0, 1, 2]),
       st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(
           lambda q: sum(v * v for v in q) > 1e-3))
def test_aspect_ratio_invariance(log_s, perm, quat):
    raw = SplatRaw(np.zeros(3), np.array(log_s), np.array(quat), 0.0, np.zeros(3))
    a1, a2 = aspect_ratios(activate(raw))
    assert a1 >= a2 >= 1
    permuted = SplatRaw(np.zeros(3), np.array(log_s)[list(perm)], np.array([1.0, 0, 0, 0]),
                        0.0, np.zeros(3))
    b1, b2 = aspect_ratios(activate(permuted))
    assert math.isclose(a1, b1, rel_tol=1e-12) and math.isclose(a2, b2, rel_tol=1e-12)


def _identity_camera(**kw):
    args = dict(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480,
                rotation=np.eye(3), translation=np.zeros(3))
    args.update(kw)
    return CameraModel(**args)


def test_project_principal_point_and_behind():
    cam = _identity_camera()
    pix, depth = project_mean(cam, [0, 0, 1])
    np.testing.assert_array_equal(pix, [320, 240])
    assert depth == 1
    assert project_mean(cam, [0, 0, -1]) is None


def _random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    return q if np.linalg.det(q) > 0 else -q


def test_project_matches_homogeneous_oracle(rng):
    for _ in range(200):
        cam = _identity_camera(fx=rng.uniform(100, 900), fy=rng.uniform(100, 900),
                               cx=rng.uniform(0, 640), cy=rng.uniform(0, 480),
                               rotation=_random_rotation(rng), translation=rng.normal(size=3))
        p = rng.normal(size=3) * 3
        got = project_mean(cam, p)
        pix, depth = homogeneous_project(cam.K, cam.rotation, cam.translation, p)
        if depth <= 0:
            assert got is None
            continue
        np.testing.assert_allclose(got[0], pix, atol=1e-9)
        assert abs(got[1] - depth) < 1e-9
        vp, vd, vf = project_points(cam, p[None])
        np.testing.assert_allclose(vp[0], pix, atol=1e-9)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.1, 10))
def test_projection_scale_consistent(x, y, z):
    cam = _identity_camera()
    a, _ = project_mean(cam, [x, y, z])
    b, _ = project_mean(cam, [2 * x, 2 * y, 2 * z])
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-9)


def test_camera_json_and_colmap(tmp_path, rng):
    R = _random_rotation(rng)
    entry = {"fx": 100, "fy": 110, "cx": 50, "cy": 40, "width": 100, "height": 80,
             "rotation": R.ravel().tolist(), "translation": [1, 2, 3], "mask_path": "m/a.png"}
    path = tmp_path / "cams.json"
    path.write_text(__import__("json").dumps([entry]))
    cam = load_cameras_json(path)[0]
    np.testing.assert_allclose(cam.rotation, R)
    assert cam.mask_path == str(tmp_path / "m" / "a.png")

    (tmp_path / "cameras.txt").write_text(
        "# Camera list\n1 PINHOLE 100 80 100 110 50 40\n2 SIMPLE_PINHOLE 64 48 90 32 24\n")
    (tmp_path / "images.txt").write_text(
        "# Image list\n"
        "2 1 0 0 0 0 0 1 2 b.png\n\n"
        "1 0.7071067811865476 0 0 0.7071067811865476 1 2 3 1 a.png\n"
        "10.5 20.5 -1 30.0 40.0 7\n")
    cams = load_colmap_text(tmp_path / "cameras.txt", tmp_path / "images.txt")
    assert [c.mask_path for c in cams] == ["a.png", "b.png"]
    assert (cams[0].fx, cams[0].fy, cams[1].fx, cams[1].fy) == (100, 110, 90, 90)
    np.testing.assert_allclose(cams[0].rotation, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)
