import numpy as np
import pytest

from raliflow.errors import EmptyCloud, FrameMismatch
from raliflow.geom import SE3, PointCloud
from raliflow.preprocess import (DenoiseParams, GroundParams, denoise_radar,
                                 hard_threshold_mu, project_radar_to_lidar,
                                 remove_ground)


def make_plane(rng, n=1500, z=-1.8, half=10.0):
    return np.column_stack([rng.uniform(-half, half, n), rng.uniform(-half, half, n),
                            np.full(n, z)])


def test_flat_plane_all_ground():
    rng = np.random.default_rng(0)
    cloud = PointCloud(make_plane(rng), "lidar")
    keep = remove_ground(cloud)
    assert keep.sum() == 0


def test_pole_survives_plane_removed():
    rng = np.random.default_rng(1)
    plane = make_plane(rng)
    pole = np.column_stack([np.full(60, 3.0), np.full(60, 2.0), np.linspace(0.0, 2.0, 60)])
    cloud = PointCloud(np.vstack([plane, pole]), "lidar")
    keep = remove_ground(cloud)
    assert keep[:len(plane)].sum() == 0
    assert keep[len(plane):].all()


def test_gentle_ramp_marked_ground():
    # 5 degree slope (0.087 rad) stays under the 0.15 rad cap
    rng = np.random.default_rng(2)
    r = rng.uniform(1.0, 10.0, 800)
    ang = rng.uniform(-np.pi, np.pi, 800)
    z = -1.8 + r * np.tan(np.deg2rad(5.0))
    cloud = PointCloud(np.column_stack([r * np.cos(ang), r * np.sin(ang), z]), "lidar")
    keep = remove_ground(cloud)
    assert keep.sum() == 0


def test_steep_wall_kept():
    rng = np.random.default_rng(3)
    plane = make_plane(rng)
    wall_y = rng.uniform(-2, 2, 120)
    wall_z = rng.uniform(-1.5, 0.5, 120)
    wall = np.column_stack([np.full(120, 5.0), wall_y, wall_z])
    cloud = PointCloud(np.vstack([plane, wall]), "lidar")
    keep = remove_ground(cloud)
    # wall points well above the plane survive
    high = wall_z > -1.3
    assert keep[len(plane):][high].mean() > 0.9


def test_remove_ground_empty_raises():
    with pytest.raises(EmptyCloud):
        remove_ground(PointCloud(np.zeros((0, 3)), "lidar"))


def test_remove_ground_rotation_invariant_interior():
    # sector-interior fixture: all points at angles far from sector edges
    rng = np.random.default_rng(4)
    n = 400
    sector_width = 2 * np.pi / 32
    ang = (rng.integers(0, 32, n) + 0.5) * sector_width - np.pi + \
        rng.uniform(-0.3, 0.3, n) * sector_width
    r = rng.uniform(1, 9, n)
    z = np.where(rng.random(n) < 0.8, -1.8, 0.0)
    pts = np.column_stack([r * np.cos(ang), r * np.sin(ang), z])
    keep1 = remove_ground(PointCloud(pts, "lidar"))
    rot = SE3.from_yaw_translation(sector_width * 3, np.zeros(3))  # whole sectors
    keep2 = remove_ground(PointCloud(rot.apply(pts), "lidar"))
    assert np.array_equal(keep1, keep2)


def test_remove_ground_deterministic():
    rng = np.random.default_rng(5)
    pts = np.vstack([make_plane(rng, 800), rng.uniform(-5, 5, (200, 3))])
    cloud = PointCloud(pts, "lidar")
    assert np.array_equal(remove_ground(cloud), remove_ground(cloud))


# ---- projection ------------------------------------------------------------


def test_project_identity_and_translation():
    rng = np.random.default_rng(6)
    radar = PointCloud(rng.normal(size=(20, 3)), "radar", arv=rng.normal(size=20))
    same = project_radar_to_lidar(radar, SE3.identity())
    assert np.array_equal(same.positions, radar.positions)
    t = SE3(np.eye(3), np.array([0.5, 0.0, 0.2]))
    moved = project_radar_to_lidar(radar, t)
    assert np.allclose(moved.positions, radar.positions + [0.5, 0.0, 0.2])
    assert np.array_equal(moved.arv, radar.arv)  # ARV carried unchanged


def test_project_roundtrip():
    rng = np.random.default_rng(7)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    ext = SE3(q, rng.normal(size=3))
    radar = PointCloud(rng.normal(size=(15, 3)), "radar", arv=rng.normal(size=15))
    back = project_radar_to_lidar(project_radar_to_lidar(radar, ext), ext.inverse())
    assert np.allclose(back.positions, radar.positions, atol=1e-9)


# ---- denoising -------------------------------------------------------------


def test_hard_threshold_mu_arithmetic():
    # dynamic ARVs {1,2,3}: mu = mean + 10 = 12
    assert hard_threshold_mu(np.array([1.0, 2.0, 3.0, 0.1])) == pytest.approx(12.0)
    # and a 15 m/s point sits above that threshold
    assert 15.0 > hard_threshold_mu(np.array([1.0, 2.0, 3.0, 0.1]))


def test_hard_threshold_no_dynamic_points():
    assert hard_threshold_mu(np.array([0.1, -0.3, 0.2])) is None


def test_denoise_outlier_dropped_by_stage1():
    # dynamics {1,2,3} + a 30 m/s outlier: mu = (1+2+3+30)/4 + 10 = 19
    radar = PointCloud(np.array([[1, 0, 0], [2, 0, 0], [3, 0, 0], [4, 0, 0.0]]),
                       "radar", "f", arv=np.array([1.0, 2.0, 3.0, 30.0]))
    lidar = PointCloud(radar.positions + [0, 0.1, 0], "lidar", "f")
    keep = denoise_radar(radar, lidar)
    assert keep.tolist() == [True, True, True, False]


def test_denoise_stage1_noop_without_dynamics():
    radar = PointCloud(np.array([[1, 0, 0], [2, 0, 0.0]]), "radar", "f",
                       arv=np.array([0.1, -0.2]))
    lidar = PointCloud(radar.positions, "lidar", "f")
    assert denoise_radar(radar, lidar).all()


def test_denoise_isolated_point_dropped_by_stage2():
    # >1.2 m half-window reach at 0.8 m cells
    radar = PointCloud(np.array([[1, 0, 0], [30, 30, 0.0]]), "radar", "f",
                       arv=np.zeros(2))
    lidar = PointCloud(np.array([[1, 0.1, 0.0]]), "lidar", "f")
    assert denoise_radar(radar, lidar).tolist() == [True, False]


def test_denoise_never_drops_cohabiting_point():
    rng = np.random.default_rng(8)
    pts = rng.uniform(-10, 10, (40, 3))
    radar = PointCloud(pts, "radar", "f", arv=rng.uniform(-0.4, 0.4, 40))
    lidar = PointCloud(pts + rng.normal(size=(40, 3)) * 0.05, "lidar", "f")
    keep = denoise_radar(radar, lidar)
    assert keep.all()  # same-cell lidar neighbors guarantee survival


def test_denoise_retained_points_below_mu():
    rng = np.random.default_rng(9)
    arv = np.concatenate([rng.uniform(-6, 6, 30), [40.0, -35.0]])
    pts = rng.uniform(-8, 8, (32, 3))
    radar = PointCloud(pts, "radar", "f", arv=arv)
    lidar = PointCloud(pts, "lidar", "f")
    params = DenoiseParams()
    keep = denoise_radar(radar, lidar, params)
    mu = hard_threshold_mu(arv, params)
    assert np.abs(arv[keep]).max() <= mu


def test_denoise_frame_mismatch():
    radar = PointCloud(np.ones((1, 3)), "radar", "a", arv=np.zeros(1))
    lidar = PointCloud(np.ones((1, 3)), "lidar", "b")
    with pytest.raises(FrameMismatch):
        denoise_radar(radar, lidar)


def test_denoise_deterministic():
    rng = np.random.default_rng(10)
    pts = rng.uniform(-10, 10, (60, 3))
    radar = PointCloud(pts, "radar", "f", arv=rng.normal(size=60) * 3)
    lidar = PointCloud(rng.uniform(-10, 10, (300, 3)), "lidar", "f")
    assert np.array_equal(denoise_radar(radar, lidar), denoise_radar(radar, lidar))
