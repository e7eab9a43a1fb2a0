import numpy as np
import pytest

from raliflow.errors import DegeneratePoint, TrackMismatch
from raliflow.geom import (SE3, EgoMotion, PointCloud, TrackedBox, box_contains,
                           compensate_box, ego_compensate, radial_project,
                           rigid_box_flow)


def random_se3(rng):
    # random rotation via QR, fixed to det +1
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return SE3(q, rng.normal(size=3))


def test_se3_apply_identity():
    p = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(SE3.identity().apply(p), p)


def test_se3_apply_translation():
    t = SE3(np.eye(3), np.array([1.0, 0.0, 0.0]))
    assert np.allclose(t.apply(np.zeros(3)), [1, 0, 0])


def test_se3_apply_yaw_quarter_turn():
    t = SE3.from_yaw_translation(np.pi / 2, np.zeros(3))
    assert np.allclose(t.apply(np.array([1.0, 0.0, 0.0])), [0, 1, 0], atol=1e-15)


def test_se3_inverse_identity():
    inv = SE3.identity().inverse()
    assert np.allclose(inv.matrix(), np.eye(4))


def test_se3_compose_and_inverse_roundtrip():
    rng = np.random.default_rng(0)
    for _ in range(20):
        t = random_se3(rng)
        t.validate()
        p = rng.normal(size=3)
        assert np.allclose(t.inverse().apply(t.apply(p)), p, atol=1e-9)
        both = t.compose(t.inverse())
        assert np.allclose(both.matrix(), np.eye(4), atol=1e-9)


def test_se3_compose_translations():
    a = SE3(np.eye(3), np.array([1.0, 0.0, 0.0]))
    b = SE3(np.eye(3), np.array([0.0, 2.0, 0.0]))
    assert np.allclose(a.compose(b).apply(np.zeros(3)), [1, 2, 0])


def test_se3_compose_matches_sequential_apply():
    rng = np.random.default_rng(1)
    for _ in range(10):
        a, b = random_se3(rng), random_se3(rng)
        p = rng.normal(size=(5, 3))
        assert np.allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-12)


def test_radial_project_cases():
    assert radial_project(np.array([3.0, 4.0, 0.0]), np.array([1.0, 0.0, 0.0])) == pytest.approx(0.6)
    assert radial_project(np.array([0.0, 0.0, 5.0]), np.array([1.0, 0.0, 0.0])) == pytest.approx(0.0)
    assert radial_project(np.array([1.0, 0.0, 0.0]), np.array([2.0, 0.0, 0.0])) == pytest.approx(2.0)


def test_radial_project_along_los_is_magnitude():
    rng = np.random.default_rng(2)
    for _ in range(20):
        p = rng.normal(size=3)
        if np.linalg.norm(p) < 1e-3:
            continue
        lam = rng.normal()
        v = lam * p / np.linalg.norm(p)
        assert radial_project(p, v) == pytest.approx(lam, abs=1e-12)


def test_radial_project_degenerate():
    with pytest.raises(DegeneratePoint):
        radial_project(np.zeros(3), np.ones(3))


def test_box_contains_basic():
    box = TrackedBox(1, "car", np.zeros(3), np.array([2.0, 2.0, 2.0]), 0.0)
    assert box_contains(box, np.array([0.9, 0.0, 0.0]))
    assert not box_contains(box, np.array([1.1, 0.0, 0.0]))
    # face point is inside (closed intervals)
    assert box_contains(box, np.array([1.0, 0.0, 0.0]))


def test_box_contains_yawed():
    box = TrackedBox(1, "car", np.zeros(3), np.array([4.0, 2.0, 2.0]), np.pi / 2)
    # box long axis now along y
    assert box_contains(box, np.array([0.0, 1.9, 0.0]))
    assert not box_contains(box, np.array([1.9, 0.0, 0.0]))


def test_box_contains_yaw_equivariant():
    rng = np.random.default_rng(3)
    for _ in range(20):
        center = rng.normal(size=3)
        dims = rng.uniform(0.5, 3.0, size=3)
        yaw = rng.uniform(-np.pi, np.pi)
        box = TrackedBox(1, "car", center, dims, yaw)
        p = center + rng.normal(size=3)
        dyaw = rng.uniform(-np.pi, np.pi)
        rot = SE3.from_yaw_translation(dyaw, np.zeros(3))
        wrapped = np.arctan2(np.sin(yaw + dyaw), np.cos(yaw + dyaw))
        box2 = TrackedBox(1, "car", rot.apply(center), dims, wrapped)
        assert box_contains(box, p) == box_contains(box2, rot.apply(p))


def test_rigid_box_flow_translation():
    src = TrackedBox(1, "car", np.zeros(3), np.array([4.0, 2.0, 1.5]), 0.3)
    tgt = TrackedBox(1, "car", np.array([1.0, 0.0, 0.0]), src.dims, 0.3)
    p = np.array([0.4, 0.2, 0.1])
    assert np.allclose(rigid_box_flow(src, tgt, p), [1, 0, 0], atol=1e-12)


def test_rigid_box_flow_rotation_about_center():
    src = TrackedBox(1, "car", np.array([2.0, 1.0, 0.0]), np.array([4.0, 2.0, 1.5]), 0.0)
    tgt = TrackedBox(1, "car", src.center, src.dims, np.pi / 2)
    # the center itself is a fixed point
    assert np.allclose(rigid_box_flow(src, tgt, src.center), 0.0, atol=1e-12)
    # center + (1,0,0) sweeps to center + (0,1,0)
    flow = rigid_box_flow(src, tgt, src.center + np.array([1.0, 0.0, 0.0]))
    assert np.allclose(flow, [-1, 1, 0], atol=1e-12)


def test_rigid_box_flow_track_mismatch():
    a = TrackedBox(1, "car", np.zeros(3), np.ones(3), 0.0)
    b = TrackedBox(2, "car", np.zeros(3), np.ones(3), 0.0)
    with pytest.raises(TrackMismatch):
        rigid_box_flow(a, b, np.zeros(3))


def test_rigid_box_flow_equivariant_under_reexpression():
    rng = np.random.default_rng(4)
    for _ in range(10):
        src = TrackedBox(1, "car", rng.normal(size=3), rng.uniform(1, 3, 3),
                         rng.uniform(-np.pi, np.pi))
        tgt = TrackedBox(1, "car", src.center + rng.normal(size=3), src.dims,
                         src.yaw + rng.uniform(-0.5, 0.5))
        p = src.center + rng.normal(size=3)
        flow = rigid_box_flow(src, tgt, p)
        dyaw = rng.uniform(-np.pi, np.pi)
        t = SE3.from_yaw_translation(dyaw, rng.normal(size=3))

        def reexpress(b):
            c = t.apply(b.center)
            return TrackedBox(b.track_id, b.class_label, c, b.dims, b.yaw + dyaw)

        flow2 = rigid_box_flow(reexpress(src), reexpress(tgt), t.apply(p))
        assert np.allclose(flow2, t.rotation @ flow, atol=1e-9)


def test_ego_compensate_identity_and_roundtrip():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(30, 3))
    cloud = PointCloud(pts, "lidar", "f")
    ego_id = EgoMotion(SE3.identity(), 0.1)
    assert np.array_equal(ego_compensate(cloud, ego_id).positions, pts)

    t = random_se3(rng)
    ego = EgoMotion(t, 0.1)
    moved = PointCloud(t.apply(pts), "lidar", "f")
    back = ego_compensate(moved, ego)
    assert np.allclose(back.positions, pts, atol=1e-9)


def test_compensate_box_static_point_zero_flow():
    # a static box seen in the target frame maps back onto the source box
    rng = np.random.default_rng(6)
    for _ in range(10):
        yaw = rng.uniform(-np.pi, np.pi)
        box_world = TrackedBox(3, "car", rng.normal(size=3), np.array([4, 2, 1.5]), yaw)
        ego_pose = SE3.from_yaw_translation(rng.uniform(-0.1, 0.1), rng.normal(size=3) * 0.2)
        ego = EgoMotion(ego_pose.inverse(), 0.1)
        box_tgt = compensate_box(
            TrackedBox(3, "car", ego_pose.inverse().apply(box_world.center),
                       box_world.dims,
                       box_world.yaw - np.arctan2(ego_pose.rotation[1, 0], ego_pose.rotation[0, 0])),
            ego)
        p = box_world.center + rng.normal(size=3) * 0.5
        assert np.allclose(rigid_box_flow(box_world, box_tgt, p), 0.0, atol=1e-9)


def test_pointcloud_select_preserves_channels():
    rng = np.random.default_rng(7)
    cloud = PointCloud(rng.normal(size=(10, 3)), "radar", "f",
                       arv=rng.normal(size=10), rcs=rng.normal(size=10))
    sub = cloud.select(np.array([2, 5, 7]))
    assert len(sub) == 3
    assert np.array_equal(sub.arv, cloud.arv[[2, 5, 7]])
    assert sub.rrv is None
