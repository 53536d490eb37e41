import math
from dataclasses import replace

import numpy as np
import pytest

from icare.errors import UsageError
from icare.numcore import AdamConfig, Tensor
from icare.pathnet import (
    PathNet,
    PathNetConfig,
    constant_path_mse,
    denormalize_angles,
    extract_context,
    load_pathnet,
    normalize_angles,
    path_error_by_step,
    predict_dataset,
    predict_path,
    save_pathnet,
    train_pathnet,
)
from icare.scenegen import Dataset, rasterize
from icare.scenegen.world import EGO_LANE_OFFSET, LANE_WIDTH


@pytest.fixture(scope="module")
def corpus():
    return Dataset.generate(600, 5)


@pytest.fixture(scope="module")
def trained(corpus):
    cfg = PathNetConfig(epochs=5, batch_size=16, adam=AdamConfig(lr=0.001))
    return train_pathnet(corpus, cfg, seed=1)


def test_architecture_shapes():
    net = PathNet(0)
    net.eval()
    x = Tensor(np.random.default_rng(0).standard_normal((3, 7, 96, 96)))
    out, ctx = net.forward_with_context(x)
    assert out.shape == (3, 10)
    assert ctx.shape == (3, 288) and net.context_dim == 288


def test_angle_normalisation_round_trip():
    a = np.array([-12.0, 0.0, 5.7296, 12.0])
    np.testing.assert_allclose(denormalize_angles(normalize_angles(a)), a, atol=1e-12)
    assert np.max(np.abs(normalize_angles(a))) == 1.0


def test_inference_deterministic_and_shaped(corpus):
    net = PathNet(3)
    raster = corpus.raster(corpus.ids("test")[0])
    a, b = predict_path(net, raster), predict_path(net, raster)
    assert a.shape == (10,)
    np.testing.assert_array_equal(a, b)


def test_context_non_negative(corpus):
    ctx = extract_context(PathNet(0), corpus.raster(0))
    assert ctx.shape == (288,) and np.all(ctx >= 0)


def test_batch_and_single_inference_agree(corpus):
    net = PathNet(2)
    ids = corpus.ids("test")[:4]
    paths, contexts = predict_dataset(net, corpus, ids)
    for k, sid in enumerate(ids):
        np.testing.assert_allclose(paths[k], predict_path(net, corpus.raster(sid)), atol=1e-10)
        np.testing.assert_allclose(contexts[k], extract_context(net, corpus.raster(sid)), atol=1e-10)


def test_empty_training_set_rejected(corpus):
    with pytest.raises(UsageError):
        train_pathnet(corpus, PathNetConfig(max_scenes=0))


def test_training_is_deterministic(corpus):
    cfg = PathNetConfig(epochs=1, batch_size=8, max_scenes=40)
    a = train_pathnet(corpus, cfg, seed=4)
    b = train_pathnet(corpus, cfg, seed=4)
    assert a.train_mse == b.train_mse and a.val_mse == b.val_mse


def test_trace_finite_and_best_so_far_monotone(trained):
    assert all(np.isfinite(trained.train_mse)) and all(np.isfinite(trained.val_mse))
    best = trained.best_so_far
    assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
    assert trained.val_mse[trained.best_epoch] == best[-1]
    assert not trained.net.training


def test_straight_paths_predicted_smaller_than_turns(corpus, trained):
    ids = corpus.ids("test")
    paths, _ = predict_dataset(trained.net, corpus, ids)
    straight = [np.mean(np.abs(p)) for p, s in zip(paths, ids) if corpus.scenes[s].ego.intent == "straight"]
    turns = [np.mean(np.abs(p)) for p, s in zip(paths, ids) if corpus.scenes[s].ego.intent != "straight"]
    assert np.mean(straight) < np.mean(turns)


def test_error_by_step_has_ten_entries(corpus, trained):
    err = path_error_by_step(trained.net, corpus, corpus.ids("test"))
    assert err.shape == (10,) and np.all(err >= 0)


def test_context_reflects_intent(corpus, trained):
    scene = next(s for s in corpus.scenes.values() if s.ego.intent == "left" and s.users)
    right_ego = replace(scene.ego, intent="right", x=LANE_WIDTH / 2 + EGO_LANE_OFFSET["right"])
    right = replace(scene, ego=right_ego)
    a = extract_context(trained.net, rasterize(scene))
    b = extract_context(trained.net, rasterize(right))
    assert np.linalg.norm(a - b) > 0


def test_checkpoint_round_trip(corpus, trained, tmp_path):
    path = str(tmp_path / "p.icre")
    save_pathnet(path, trained.net)
    back = load_pathnet(path)
    raster = corpus.raster(1)
    np.testing.assert_array_equal(predict_path(back, raster), predict_path(trained.net, raster))


def test_wrong_checkpoint_kind_rejected(tmp_path):
    from icare.proposer import ProposerNet, save_proposer

    path = str(tmp_path / "x.icre")
    save_proposer(path, ProposerNet(0))
    with pytest.raises(UsageError):
        load_pathnet(path)


def test_constant_predictor_zero_on_constant_paths(corpus):
    ids = [i for i in corpus.ids("test") if corpus.scenes[i].ego.intent == "straight"][:1]
    assert constant_path_mse(corpus, ids, ids) == 0.0
    assert math.isfinite(constant_path_mse(corpus, corpus.ids("train"), corpus.ids("test")))
