import json

import numpy as np
import pytest

from stylepoint.autodiff import Tensor
from stylepoint.camera import DepthRaster, cloud_from_view
from stylepoint.metrics import (ConsistencyReport, consistency_rmse, masked_feature_distance,
                                masked_rmse, trajectory_pairs, warp)
from stylepoint.pyramid import build_pyramid_weights
from stylepoint.renderer import rasterize
from stylepoint.scenes import Rect, SyntheticScene, Texture, make_scene
from stylepoint.training import sample_view


def smooth_wall_scene(size=32):
    """A single gently-graded back wall: bilinear-resampling error stays
    inside the 2/255 oracle tolerance."""
    from stylepoint.scenes import _canonical_camera

    cam = _canonical_camera(size)
    tex = Texture("gradient", np.array([0.45, 0.5, 0.55]), np.array([0.62, 0.58, 0.42]))
    wall = Rect([-3.2, -3.2, 4.0], [6.4, 0, 0], [0, 6.4, 0], tex)
    return SyntheticScene("wall", 0, [wall], cam)


def gt_views(scene, cams):
    """Rasterize the shared cloud per camera and attach exact GT images."""
    rgb, depth = scene.render(scene.canonical)
    cloud = cloud_from_view(rgb, DepthRaster(depth), scene.canonical)
    views = []
    for cam in cams:
        view = rasterize(cloud, cloud.colors, cam)
        img, _ = scene.render(cam)
        view.image = Tensor(img)
        views.append(view)
    return cloud, views


def test_warp_identity_is_exact():
    scene = smooth_wall_scene()
    cam = scene.canonical
    _, (v1, v2) = gt_views(scene, [cam, cam.with_pose(cam.rotation, cam.translation)])
    warped, mask = warp(v1, v2)
    assert mask.any()
    np.testing.assert_array_equal(warped[mask], v1.image.numpy()[mask])
    assert masked_rmse(warped, v2.image.numpy(), mask) == 0.0


def test_warp_single_point_scene():
    from stylepoint.camera import CameraSpec, normalize_ndc

    cam = CameraSpec(fx=8.0, fy=8.0, cx=4.5, cy=4.5, width=8, height=8)
    cloud = normalize_ndc(np.array([[0.0, 0.0, 2.0]]), np.full((1, 3), 0.5, np.float32),
                          np.zeros(1), cam, 1.0, 4.0)
    v1 = rasterize(cloud, cloud.colors, cam)
    v2 = rasterize(cloud, cloud.colors, cam)
    img = np.zeros((8, 8, 3), np.float32)
    img[4, 4] = [0.9, 0.1, 0.4]
    v1.image = Tensor(img)
    v2.image = Tensor(img)
    warped, mask = warp(v1, v2)
    assert mask.sum() == 1
    np.testing.assert_allclose(warped[4, 4], [0.9, 0.1, 0.4])


def test_warp_matches_rerender_oracle():
    """Transporting GT view i onto view j reproduces the direct re-render
    of view j on the co-visible mask within resampling tolerance."""
    scene = smooth_wall_scene()
    cam_j = scene.canonical
    rng = np.random.default_rng(2)
    cam_i = sample_view(cam_j, rng, translation=0.08, rotation_deg=3.0)
    _, (vi, vj) = gt_views(scene, [cam_i, cam_j])
    warped, mask = warp(vi, vj)
    assert mask.sum() > 200
    err = np.abs(warped[mask] - vj.image.numpy()[mask]).max()
    assert err <= 2.0 / 255.0, f"max warp error {err * 255:.2f}/255"


def test_warp_never_writes_outside_mask():
    scene = smooth_wall_scene()
    rng = np.random.default_rng(3)
    cam_i = sample_view(scene.canonical, rng, 0.05, 2.0)
    _, (vi, vj) = gt_views(scene, [cam_i, scene.canonical])
    warped, mask = warp(vi, vj)
    assert np.all(warped[~mask] == 0.0)


def test_warp_empty_covisibility_errors():
    scene = smooth_wall_scene()
    cam = scene.canonical
    far_cam = cam.with_pose(cam.rotation, cam.translation + np.array([50.0, 0, 0]))
    _, (v1, v2) = gt_views(scene, [cam, far_cam])
    with pytest.raises(ValueError, match="co-visible"):
        warp(v1, v2)


def test_masked_rmse_hand_computed():
    # 3 masked pixels with hand-computed residuals
    warped = np.zeros((2, 2, 3), np.float32)
    target = np.zeros((2, 2, 3), np.float32)
    mask = np.zeros((2, 2), bool)
    mask[0, 0] = mask[0, 1] = mask[1, 1] = True
    warped[0, 0] = 0.5
    target[0, 0] = 0.1   # diff 0.4 on 3 channels
    warped[0, 1] = 0.2
    target[0, 1] = 0.2   # diff 0
    warped[1, 1] = 0.0
    target[1, 1] = 0.3   # diff 0.3 on 3 channels
    expected = np.sqrt((3 * 0.4 ** 2 + 0 + 3 * 0.3 ** 2) / 9.0)
    assert masked_rmse(warped, target, mask) == pytest.approx(expected, rel=1e-6)


def test_trajectory_pairs_structure():
    pairs = trajectory_pairs(10, stride=7)
    shorts = [(i, j) for i, j, k in pairs if k == "short"]
    longs = [(i, j) for i, j, k in pairs if k == "long"]
    assert shorts == [(i, i + 1) for i in range(9)]
    assert longs == [(0, 7), (1, 8), (2, 9)]


def test_consistency_rmse_static_trajectory_zero():
    scene = smooth_wall_scene()
    cams = [scene.canonical.with_pose(scene.canonical.rotation, scene.canonical.translation)
            for _ in range(9)]
    _, views = gt_views(scene, cams)
    report = consistency_rmse(views, build_pyramid_weights())
    assert len(report.pairs) > 0
    for p in report.pairs:
        assert p.rmse == 0.0


def test_consistency_rmse_pair_symmetry_within_tolerance():
    scene = smooth_wall_scene()
    rng = np.random.default_rng(5)
    cams = [scene.canonical, sample_view(scene.canonical, rng, 0.06, 2.0)]
    _, views = gt_views(scene, cams)
    a = consistency_rmse(views, build_pyramid_weights()).pairs[0].rmse
    b = consistency_rmse(views[::-1], build_pyramid_weights()).pairs[0].rmse
    assert abs(a - b) <= 0.02


def test_report_means_permutation_invariant():
    r = ConsistencyReport()
    from stylepoint.metrics import PairResult

    r.pairs = [PairResult(0, 1, "short", 0.1, 0.01, 5),
               PairResult(1, 2, "short", 0.3, 0.03, 5),
               PairResult(0, 7, "long", 0.5, 0.05, 5)]
    d1 = r.to_dict()
    r.pairs = r.pairs[::-1]
    d2 = r.to_dict()
    assert d1["mean_rmse_short"] == d2["mean_rmse_short"]
    assert d1["mean_rmse_long"] == d2["mean_rmse_long"]


def test_report_json_and_csv_round_trip(tmp_path):
    from stylepoint.metrics import PairResult

    r = ConsistencyReport()
    r.pairs = [PairResult(0, 1, "short", 0.125, 0.01, 42)]
    r.excluded_pairs = [(3, 4)]
    jpath = tmp_path / "r.json"
    r.save_json(jpath)
    loaded = json.loads(jpath.read_text())
    assert loaded["pairs"][0]["rmse"] == 0.125
    assert loaded["excluded_pairs"] == [[3, 4]]
    cpath = tmp_path / "r.csv"
    r.save_csv(cpath)
    assert "0,1,short,0.125000,0.010000,42" in cpath.read_text()


def test_masked_feature_distance_properties():
    pyramid = build_pyramid_weights()
    rng = np.random.default_rng(0)
    img = np.clip(make_gradient_image(32), 0, 1)
    mask = np.zeros((32, 32), bool)
    mask[4:28, 6:26] = True
    assert masked_feature_distance(img, img, mask, pyramid) == 0.0
    dists = []
    for noise in (0.05, 0.1, 0.2):
        noisy = np.clip(img + rng.normal(0, noise, img.shape).astype(np.float32), 0, 1)
        dists.append(masked_feature_distance(img, noisy, mask, pyramid))
    assert dists[0] < dists[1] < dists[2]
    with pytest.raises(ValueError, match="mask"):
        masked_feature_distance(img, img, np.zeros((32, 32), bool), pyramid)


def make_gradient_image(size):
    iy, ix = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    img = np.stack([0.3 + 0.4 * ix / size, 0.5 - 0.2 * iy / size,
                    0.4 + 0.1 * (ix + iy) / (2 * size)], axis=2)
    return img.astype(np.float32)
