import numpy as np
import pytest

from raliflow.ad import Tensor, grad_check, reduce_sum, mul
from raliflow.bev import (FEATURE_SCALES, GaussianHeatmap, GridSpec, distance_transform_sq,
                          dynamic_radar_map, encode_pillars, gaussian_heatmap,
                          pillarize, point_features)
from raliflow.errors import ConfigInvalid
from raliflow.geom import PointCloud


GRID = GridSpec((0.0, 0.0), 0.1, 8, 8)


def radar(pts, arv):
    return PointCloud(np.asarray(pts, dtype=float), "radar", arv=np.asarray(arv, dtype=float))


# ---- pillarize -------------------------------------------------------------


def test_pillarize_half_open_cells():
    cloud = radar([[0.05, 0.05, 0.0], [0.10, 0.0, 0.0], [-0.01, 0.0, 0.0]], [0, 0, 0])
    a = pillarize(cloud, GRID)
    assert (a.ix[0], a.iy[0]) == (0, 0)
    assert (a.ix[1], a.iy[1]) == (1, 0)  # boundary point goes right
    assert not a.in_grid[2]
    assert a.flat[2] == -1


def test_pillarize_grid_validation():
    with pytest.raises(ConfigInvalid):
        pillarize(radar([[0, 0, 0]], [0]), GridSpec((0, 0), 0.1, 7, 8))
    with pytest.raises(ConfigInvalid):
        GridSpec((0, 0), -1.0, 8, 8).validate()


# ---- pillar encoding -------------------------------------------------------


def enc_params(seed, c=4):
    rng = np.random.default_rng(seed)
    return (Tensor(rng.normal(size=(6, c)), requires_grad=True),
            Tensor(rng.normal(size=c) * 0.1, requires_grad=True))


def test_encode_empty_cells_zero_and_occupancy():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0.0, 0.8, (30, 3))
    cloud = PointCloud(pts, "lidar", intensity=rng.random(30))
    a = pillarize(cloud, GRID)
    w, b = enc_params(1)
    fmap = encode_pillars(cloud, a, GRID, w, b)
    occupied = np.zeros((8, 8), dtype=bool)
    occupied.reshape(-1)[a.flat[a.in_grid]] = True
    assert np.array_equal(fmap.occupancy, occupied)
    assert not np.any(fmap.features.data[~occupied])


def test_encode_single_point_is_its_own_max():
    cloud = radar([[0.42, 0.13, -1.0]], [2.0])
    a = pillarize(cloud, GRID)
    w, b = enc_params(2)
    fmap = encode_pillars(cloud, a, GRID, w, b)
    feats = point_features(cloud, a, GRID)
    expect = np.maximum(feats @ w.data + b.data, 0.0)[0]
    assert np.allclose(fmap.features.data[1, 4], expect)


def test_encode_permutation_invariant_bitwise():
    rng = np.random.default_rng(3)
    pts = rng.uniform(0.0, 0.8, (40, 3))
    cloud = PointCloud(pts, "lidar", intensity=rng.random(40))
    w, b = enc_params(4)
    m1 = encode_pillars(cloud, pillarize(cloud, GRID), GRID, w, b)
    perm = rng.permutation(40)
    shuffled = cloud.select(perm)
    m2 = encode_pillars(shuffled, pillarize(shuffled, GRID), GRID, w, b)
    assert np.array_equal(m1.features.data, m2.features.data)


def test_encode_gradient_check():
    rng = np.random.default_rng(5)
    cloud = radar(np.column_stack([rng.uniform(0, 0.8, 5), rng.uniform(0, 0.8, 5),
                                   rng.uniform(-1, 0, 5)]), rng.normal(size=5))
    a = pillarize(cloud, GRID)
    w, b = enc_params(6)

    def f(w, b):
        out = encode_pillars(cloud, a, GRID, w, b).features
        return reduce_sum(mul(out, out))

    rep = grad_check(f, [w, b], max_coords=20)
    assert rep.passed, rep.max_rel_error


def test_point_feature_slots_disjoint():
    r = radar([[0.1, 0.1, -1.0]], [3.0])
    r.rcs = np.array([5.0])
    l = PointCloud(np.array([[0.1, 0.1, -1.0]]), "lidar", intensity=np.array([0.7]))
    fr = point_features(r, pillarize(r, GRID), GRID, scaled=False)
    fl = point_features(l, pillarize(l, GRID), GRID, scaled=False)
    assert fr[0, 3] == 3.0 and fr[0, 4] == 5.0 and fr[0, 5] == 0.0
    assert fl[0, 3] == 0.0 and fl[0, 4] == 0.0 and fl[0, 5] == 0.7


# ---- dynamic map -----------------------------------------------------------


def test_dynamic_map_threshold():
    cloud = radar([[0.05, 0.05, 0], [0.35, 0.05, 0], [0.55, 0.05, 0], [0.55, 0.05, 0]],
                  [0.05, 0.2, 0.05, 0.3])
    dyn = dynamic_radar_map(cloud, GRID)
    assert not dyn[0, 0]  # 0.05 m/s is static
    assert dyn[0, 3]  # 0.2 m/s
    assert dyn[0, 5]  # one fast point among two is enough


def test_dynamic_map_absolute_value():
    dyn = dynamic_radar_map(radar([[0.05, 0.05, 0]], [-0.5]), GRID)
    assert dyn[0, 0]


# ---- distance transform & heatmap -------------------------------------------


def brute_force_dist_sq(mask):
    h, w = mask.shape
    out = np.full((h, w), np.inf)
    ii, jj = np.mgrid[0:h, 0:w]
    for (pi, pj) in np.argwhere(mask):
        out = np.minimum(out, (ii - pi) ** 2.0 + (jj - pj) ** 2.0)
    return out


@pytest.mark.parametrize("seed", range(8))
def test_edt_exact_vs_brute_force(seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((16, 16)) < rng.uniform(0.02, 0.3)
    if not mask.any():
        mask[3, 11] = True
    assert np.array_equal(distance_transform_sq(mask), brute_force_dist_sq(mask))


def test_edt_all_empty_is_inf():
    assert np.all(np.isinf(distance_transform_sq(np.zeros((8, 8), dtype=bool))))


def test_heatmap_values():
    dyn = np.zeros((8, 8), dtype=bool)
    dyn[4, 4] = True
    hm = gaussian_heatmap(dyn, GRID, sigma_sq_inv=10.0)
    assert hm.values[4, 4] == 1.0  # D = 0
    # one cell over: D = 0.1 m -> G = exp(-0.01 * 10)
    assert hm.values[4, 5] == pytest.approx(np.exp(-0.1), abs=1e-15)
    assert np.all(hm.values > 0.0) and np.all(hm.values <= 1.0)


def test_heatmap_bandwidth_point():
    # D = sigma = 1/sqrt(10) gives exactly exp(-1)
    d_sq = 1.0 / 10.0
    assert np.exp(-d_sq * 10.0) == pytest.approx(np.exp(-1.0), abs=1e-15)


def test_heatmap_no_dynamic_cells_is_unity():
    hm = gaussian_heatmap(np.zeros((8, 8), dtype=bool), GRID, 10.0)
    assert np.all(hm.values == 1.0)


def test_heatmap_monotone_in_distance():
    dyn = np.zeros((8, 8), dtype=bool)
    dyn[0, 0] = True
    hm = gaussian_heatmap(dyn, GRID, 10.0)
    order = np.argsort(hm.dist_sq.reshape(-1))
    assert np.all(np.diff(hm.values.reshape(-1)[order]) <= 1e-15)
    assert hm.values.max() == 1.0
