import numpy as np
import pytest

from stylepoint.autodiff import Tensor
from stylepoint.autodiff.ops import BatchNormState
from stylepoint.camera import NdcRecord, CameraSpec, ScenePointCloud
from stylepoint.encoder import (EncoderConfig, StageConfig, build_encoder_geometry,
                                encode, init_encoder_params, mr_conv)
from stylepoint.pointcloud import ball_query

from conftest import max_rel_err


def make_cloud(rng, n):
    positions = rng.uniform(-1, 1, (n, 3)).astype(np.float32)
    colors = rng.uniform(0, 1, (n, 3)).astype(np.float32)
    cam = CameraSpec(fx=8.0, fy=8.0, cx=4.0, cy=4.0, width=8, height=8)
    return ScenePointCloud(positions, colors, np.arange(n, dtype=np.int64),
                           NdcRecord(1.0, 4.0, cam))


def mr_conv_oracle(features, positions, graph, weight, gamma, beta, eps=1e-5):
    """Straightforward per-point loop: BN(ReLU(W concat(x, max_rel)))."""
    n, c = features.shape
    pre = np.zeros((n, weight.shape[1]), np.float32)
    for i in range(n):
        nbrs = graph.indices[i, :graph.counts[i]]
        if len(nbrs) == 0:
            max_rel = np.zeros(c, np.float32)
        else:
            max_rel = (features[nbrs] - features[i]).max(axis=0)
        h = np.concatenate([features[i], max_rel])
        pre[i] = np.maximum(h @ weight, 0.0)
    mu = pre.mean(axis=0)
    var = pre.var(axis=0)
    return (pre - mu) / np.sqrt(var + eps) * gamma + beta


def test_mr_conv_matches_naive_loop(rng):
    n, c_in, c_out = 32, 6, 16
    positions = rng.uniform(-1, 1, (n, 3))
    feats = rng.standard_normal((n, c_in)).astype(np.float32)
    graph = ball_query(positions, positions, r=0.8, k=8)
    w = rng.standard_normal((2 * c_in, c_out)).astype(np.float32)
    gamma = rng.uniform(0.5, 1.5, c_out).astype(np.float32)
    beta = rng.uniform(-0.5, 0.5, c_out).astype(np.float32)
    out = mr_conv(Tensor(feats), graph, Tensor(w), Tensor(gamma), Tensor(beta),
                  BatchNormState(c_out), training=True)
    expected = mr_conv_oracle(feats, positions, graph, w, gamma, beta)
    assert max_rel_err(out.numpy(), expected) < 1e-5


def test_mr_conv_isolated_point(rng):
    # a point with no neighbors inside the radius: max-relative term is zero
    positions = np.array([[0, 0, 0], [5, 5, 5]], dtype=np.float64)
    feats = rng.standard_normal((2, 4)).astype(np.float32)
    graph = ball_query(positions, positions, r=0.1, k=4)
    w = rng.standard_normal((8, 6)).astype(np.float32)
    gamma = np.ones(6, np.float32)
    beta = np.zeros(6, np.float32)
    out = mr_conv(Tensor(feats), graph, Tensor(w), Tensor(gamma), Tensor(beta),
                  BatchNormState(6), training=True)
    expected = mr_conv_oracle(feats, positions, graph, w, gamma, beta)
    # each point only sees itself -> its relative feature is exactly zero
    assert max_rel_err(out.numpy(), expected) < 1e-5


def test_mr_conv_coincident_points_equal_outputs(rng):
    positions = np.zeros((2, 3))
    f = rng.standard_normal(4).astype(np.float32)
    feats = np.stack([f, f])
    graph = ball_query(positions, positions, r=0.5, k=2)
    w = rng.standard_normal((8, 5)).astype(np.float32)
    out = mr_conv(Tensor(feats), graph, Tensor(w), Tensor(np.ones(5, np.float32)),
                  Tensor(np.zeros(5, np.float32)), BatchNormState(5), training=True)
    np.testing.assert_array_equal(out.numpy()[0], out.numpy()[1])


def test_encoder_config_validation():
    with pytest.raises(ValueError, match="strictly increasing"):
        EncoderConfig(stages=[StageConfig(1, 64, 4, 0.1, 8), StageConfig(1, 64, 4, 0.2, 8)])


def test_encode_output_point_count(rng):
    cfg = EncoderConfig()
    assert cfg.output_points(4096) == 64
    params, bn = init_encoder_params(cfg, rng)
    cloud = make_cloud(rng, 512)
    out = encode(cloud, cfg, params, bn, training=True)
    assert out.features.shape == (cfg.output_points(512), 256)
    assert out.positions.shape == (8, 3)
    assert out.lineage.shape == (8,)
    # lineage points back into the original cloud
    np.testing.assert_allclose(cloud.positions[out.lineage], out.positions)


def test_encode_rejects_too_few_points(rng):
    cfg = EncoderConfig()
    params, bn = init_encoder_params(cfg, rng)
    cloud = make_cloud(rng, 32)
    with pytest.raises(ValueError, match="at least"):
        encode(cloud, cfg, params, bn)


def test_encode_permutation_equivariance(rng):
    cfg = EncoderConfig(stages=[StageConfig(1, 8, 2, 0.4, 8), StageConfig(2, 16, 2, 0.8, 8)])
    params, bn = init_encoder_params(cfg, rng)
    cloud = make_cloud(rng, 64)
    out1 = encode(cloud, cfg, params, bn, training=True)
    perm = rng.permutation(64)
    cloud2 = ScenePointCloud(cloud.positions[perm], cloud.colors[perm],
                             cloud.pixel_index[perm], cloud.record)
    out2 = encode(cloud2, cfg, params, bn, training=True)
    # selections follow the same geometric points; lineage maps through perm
    np.testing.assert_allclose(out1.positions, out2.positions, atol=1e-6)
    np.testing.assert_array_equal(perm[out2.lineage], out1.lineage)
    assert max_rel_err(out2.features.numpy(), out1.features.numpy()) < 1e-5


def test_encode_geometry_reuse_is_identical(rng):
    cfg = EncoderConfig(stages=[StageConfig(1, 8, 2, 0.4, 8), StageConfig(2, 16, 2, 0.8, 8)])
    params, bn = init_encoder_params(cfg, rng)
    cloud = make_cloud(rng, 64)
    geom = build_encoder_geometry(cloud.positions, cfg)
    a = encode(cloud, cfg, params, bn, geometry=geom)
    b = encode(cloud, cfg, params, bn, geometry=geom)
    np.testing.assert_array_equal(a.features.numpy(), b.features.numpy())
