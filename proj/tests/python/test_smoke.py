"""End-to-end smoke tests for the python bindings."""

import math
import os

import numpy as np
import pytest

import vat_policy as vp

MICRO_CFG = """
num_layers = 2
d_vision = 16
num_heads = 2
mlp_ratio = 2
patch_size = 4
image_h = 8
image_w = 8
chunk_size = 2
action_dim = 4
tokens_per_action = 4
episodes_per_task = 2
batch_size = 4
epochs = 1
checkpoint_every = 1
train_max_steps = 3
"""


def test_matmul_matches_numpy():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 7))
    b = rng.standard_normal((7, 3))
    np.testing.assert_allclose(vp.matmul(a, b), a @ b, atol=1e-12)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 9)) * 3
    s = vp.softmax(x)
    np.testing.assert_allclose(s.sum(axis=-1), np.ones(4), atol=1e-9)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    np.testing.assert_allclose(s, e / e.sum(axis=-1, keepdims=True), atol=1e-12)


def test_gelu_matches_erf_form():
    x = np.linspace(-4, 4, 33)
    got = vp.gelu(x)
    want = x * 0.5 * (1 + np.vectorize(math.erf)(x / math.sqrt(2)))
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_layer_norm_statistics():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 16))
    out = vp.layer_norm(x, np.ones(16), np.zeros(16), 1e-10)
    np.testing.assert_allclose(out.mean(axis=-1), np.zeros(3), atol=1e-10)
    np.testing.assert_allclose(out.var(axis=-1), np.ones(3), atol=1e-6)


def test_attention_shapes_and_scores():
    rng = np.random.default_rng(3)
    q = rng.standard_normal((2, 3, 4))
    k = rng.standard_normal((2, 5, 4))
    v = rng.standard_normal((2, 5, 4))
    out, scores = vp.attention(q, k, v)
    assert out.shape == (2, 3, 4)
    assert scores.shape == (2, 3, 5)
    np.testing.assert_allclose(scores.sum(axis=-1), np.ones((2, 3)), atol=1e-9)


def test_model_forward_and_record():
    model = vp.Model(MICRO_CFG, seed=1)
    views = [np.random.default_rng(4).random((3, 8, 8)) for _ in range(2)]
    proprio = np.array([0.1, 0.2, 0.0, 0.0])
    chunk, record = model.forward(views, task_id=1, proprio=proprio, with_record=True)
    assert chunk.shape == (2, 4)
    assert record.final_layer == 2
    scores = record.scores(0)
    np.testing.assert_allclose(scores.sum(axis=-1), np.ones(scores.shape[:2]), atol=1e-6)
    heat = record.heatmap(0, 0)
    assert heat.shape == (2, 2)

    chunk2, _ = model.forward(views, task_id=1, proprio=proprio)
    np.testing.assert_array_equal(chunk, chunk2)


def test_env_expert_rollout_succeeds():
    env = vp.Env(MICRO_CFG, task_id=0, seed=11)
    obs = env.observation()
    assert obs["view0"].shape == (3, 8, 8)
    assert 0.0 <= obs["view0"].min() and obs["view0"].max() <= 1.0
    for _ in range(80):
        obs = env.step(env.expert_action())
        if obs["done"]:
            break
    assert obs["success"]


def test_dataset_train_eval_workflow(tmp_path):
    data = str(tmp_path / "demos.vatd")
    info = vp.gen_data(MICRO_CFG, data)
    assert info["episodes"] == 8
    assert os.path.exists(data + ".json")
    assert vp.dataset_info(data)["episodes"] == 8

    out_dir = str(tmp_path / "run")
    result = vp.train(MICRO_CFG, data, out_dir)
    assert result["steps"] == 3
    assert all(os.path.exists(c) for c in result["checkpoints"])

    model = vp.load_model(result["checkpoints"][-1])
    assert model.param_count() > 0

    report = vp.evaluate(MICRO_CFG, episodes=2, seed=3, expert=True)
    assert report["mean_rate"] == 1.0


def test_grad_check_small():
    assert vp.grad_check(MICRO_CFG) < 1e-4


def test_heatmap_pipeline_and_ppm(tmp_path):
    ppm_path = str(tmp_path / "overlay.ppm")
    heat = np.zeros((2, 2))
    heat[0, 1] = 1.0
    up = vp.upsample_bicubic(heat, 16, 16)
    assert up.shape == (16, 16)
    img = np.random.default_rng(5).random((3, 16, 16))
    blended = vp.overlay(img, vp.minmax_normalize(up), 0.5)
    assert blended.min() >= 0.0 and blended.max() <= 1.0
    vp.export_ppm(blended, ppm_path)

    PIL = pytest.importorskip("PIL.Image")
    with PIL.open(ppm_path) as im:
        assert im.size == (16, 16)
        px = np.asarray(im)
    assert px.shape == (16, 16, 3)
    want = np.clip((np.transpose(blended, (1, 2, 0)) * 255.0 + 0.5).astype(int), 0, 255)
    np.testing.assert_array_equal(px, want)


def test_config_errors_surface_as_python_exceptions():
    with pytest.raises(vp.ConfigError):
        vp.Model("nonsense_key = 3\n", seed=0)
    with pytest.raises(vp.FormatError):
        vp.load_model("/nonexistent.vatc")
