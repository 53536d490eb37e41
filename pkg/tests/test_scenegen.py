import json
import math
import os
from dataclasses import replace

import numpy as np
import pytest

from icare.errors import UsageError
from icare.scenegen import (
    Dataset,
    EgoState,
    OracleConfig,
    RoadUser,
    Scene,
    SceneConfig,
    ego_path_ground_truth,
    generate_dataset,
    generate_scene,
    importance_oracle,
    perturb_annotations,
    rasterize,
    unroll_path,
)
from icare.scenegen.dataset import MANIFEST_FILE, RASTER_FILE, SCENES_FILE
from icare.scenegen.world import FOOTPRINTS, SPEED_LIMITS

NORTH = math.pi / 2


def make_scene(users, intent="straight", speed=5.0, y=-16.0, radius=10.0):
    ego = EgoState(1.75, y, NORTH, speed, intent, radius)
    return Scene(0, ego, users, ego_path_ground_truth(ego, None))


@pytest.fixture(scope="module")
def corpus():
    return Dataset.generate(1000, 11)


# -- generation ------------------------------------------------------------------


def test_generate_scene_deterministic():
    a, b = generate_scene(3, 42), generate_scene(3, 42)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)
    assert a.to_dict() != generate_scene(3, 43).to_dict()


def test_zero_user_config():
    scene = generate_scene(0, 5, SceneConfig(min_users=0, max_users=0))
    assert scene.users == []
    assert len(scene.gt_path) == 10


def test_scene_invariants(corpus):
    for scene in corpus.scenes.values():
        assert 2 <= scene.ego.speed <= 10
        assert 14 <= -scene.ego.y <= 24
        assert 0 <= len(scene.users) <= 8
        assert len(scene.gt_path) == 10 and max(abs(a) for a in scene.gt_path) <= 12
        for u in scene.users:
            assert u.speed <= SPEED_LIMITS[u.kind]
            assert abs(u.x - scene.ego.x) <= 24 and scene.ego.y - 1 <= u.y <= scene.ego.y + 47


def test_positive_rate(corpus):
    users = [u for s in corpus.scenes.values() for u in s.users]
    rate = sum(u.important for u in users) / len(users)
    assert 0.2 <= rate <= 0.5


def test_scene_json_round_trip():
    scene = generate_scene(1, 9)
    assert Scene.from_dict(json.loads(json.dumps(scene.to_dict()))).to_dict() == scene.to_dict()


# -- ego path --------------------------------------------------------------------


def test_straight_path_zero_jitter():
    assert ego_path_ground_truth(EgoState(1.75, -16, NORTH, 5, "straight"), None) == [0.0] * 10


def test_left_turn_arc_from_step_one():
    # arc for R=10 starts at y = 1.75 - 10; ego sits one metre before it
    ego = EgoState(1.75, 1.75 - 10 - 1, NORTH, 5, "left", 10.0)
    path = ego_path_ground_truth(ego, None)
    assert path[0] == 0.0
    np.testing.assert_allclose(path[1:], 5.7296, atol=1e-4)


def test_right_mirrors_left():
    left = ego_path_ground_truth(EgoState(1.75, -12.25, NORTH, 5, "left", 10.0), None)
    right = ego_path_ground_truth(EgoState(1.75, -15.75, NORTH, 5, "right", 10.0), None)
    np.testing.assert_allclose(right, -np.array(left), atol=1e-12)


def test_path_jitter_is_clamped():
    rng = np.random.default_rng(0)
    ego = EgoState(1.75, -12.25, NORTH, 5, "left", 8.0)
    for _ in range(50):
        assert max(abs(a) for a in ego_path_ground_truth(ego, rng, jitter_deg=5.0)) <= 12.0


def test_unroll_straight():
    pts = unroll_path(2.0, -3.0, NORTH, [0.0] * 10)
    np.testing.assert_allclose(pts, [(2.0, -3.0 + i) for i in range(11)], atol=1e-12)


def test_unroll_quarter_turns_have_period_four():
    pts = unroll_path(0.0, 0.0, NORTH, [90.0] * 10)
    np.testing.assert_allclose(pts[4], pts[0], atol=1e-12)
    np.testing.assert_allclose(pts[8], pts[4], atol=1e-12)
    np.testing.assert_allclose(pts[5], pts[1], atol=1e-12)


def test_unroll_net_heading_equals_sum():
    path = ego_path_ground_truth(EgoState(1.75, -11.0, NORTH, 5, "left", 9.0), None)
    pts = unroll_path(0.0, 0.0, NORTH, path)
    d = pts[-1] - pts[-2]
    assert math.atan2(d[1], d[0]) == pytest.approx(NORTH + math.radians(sum(path)), abs=1e-9)


# -- oracle ------------------------------------------------------------------------


def test_stationary_pedestrian_ahead_is_important():
    scene = make_scene([RoadUser(0, "pedestrian", 1.75, -11.0, 0.0, 0.0)])
    assert importance_oracle(scene)[0] == [True]


def test_car_behind_moving_away_is_not_important():
    scene = make_scene([RoadUser(0, "car", 1.75, -36.0, -NORTH, 8.0)])
    labels, dists = importance_oracle(scene)
    assert labels == [False] and dists[0] == pytest.approx(20.0)


def test_oncoming_car_depends_on_intent():
    car = RoadUser(0, "car", -1.75, 27.5, -NORTH, 10.0)
    left = make_scene([car], intent="left", speed=3.0, y=-9.25)
    straight = make_scene([car], intent="straight", speed=3.0, y=-9.25)
    (l_label,), (l_dist,) = importance_oracle(left)
    (s_label,), (s_dist,) = importance_oracle(straight)
    assert l_label and l_dist <= 4.0
    assert not s_label and s_dist > 4.0


def test_generator_produces_intent_dependent_users():
    # same users, intent swapped: some user must change label across a seed sweep
    flipped = 0
    for sid in range(300):
        scene = generate_scene(0, sid)
        if scene.ego.intent != "left" or not scene.users:
            continue
        ego = replace(scene.ego, intent="straight")
        other = Scene(sid, ego, scene.users, ego_path_ground_truth(ego, None))
        flipped += sum(a and not b for a, b in zip(importance_oracle(scene)[0], importance_oracle(other)[0]))
    assert flipped > 0


def test_labels_monotone_in_r_safe(corpus):
    scenes = list(corpus.scenes.values())[:200]
    for scene in scenes:
        prev = None
        for r in (2.0, 3.0, 4.0, 6.0):
            labels, _ = importance_oracle(scene, OracleConfig(r_safe=r))
            if prev is not None:
                assert all(b or not a for a, b in zip(prev, labels))
            prev = labels


def test_oracle_config_validation():
    with pytest.raises(ValueError):
        OracleConfig(r_safe=0)
    with pytest.raises(ValueError):
        OracleConfig(flip_prob=1.0)


# -- second annotator --------------------------------------------------------------


def test_far_user_label_unchanged():
    scene = make_scene([RoadUser(0, "car", 11.75, 20.0, NORTH, 0.0)])
    labels, dists = importance_oracle(scene)
    assert dists[0] > 10
    for seed in range(20):
        assert perturb_annotations(scene, seed=seed) == labels


def test_boundary_user_differs_between_annotators():
    # pedestrian walking alongside the ego, 3.5 m to its right, at the same speed
    scene = make_scene([RoadUser(0, "pedestrian", 5.25, -16.0, NORTH, 1.5)], speed=1.5)
    labels, dists = importance_oracle(scene)
    assert dists[0] == pytest.approx(3.5)
    assert labels == [True]
    no_flip = OracleConfig(flip_prob=0.0)
    assert perturb_annotations(scene, no_flip) == [False]


def test_annotator_disagreement_rate(corpus):
    users = [u for sid in corpus.ids("test") for u in corpus.scenes[sid].users]
    rate = sum(u.important != u.important_alt for u in users) / len(users)
    assert 0.05 <= rate <= 0.25


def test_perturbation_is_seeded():
    scene = generate_scene(4, 17)
    assert perturb_annotations(scene, seed=3) == perturb_annotations(scene, seed=3)


# -- raster --------------------------------------------------------------------------


def test_empty_scene_raster():
    r = rasterize(make_scene([]))
    assert r.shape == (7, 96, 96)
    assert np.all(r.channels[2:] == 0)
    assert r.channels[0].any() and r.channels[1].any()
    assert r.user_boxes == []


def test_pedestrian_box_is_two_by_two():
    r = rasterize(make_scene([RoadUser(0, "pedestrian", 1.75, -6.0, 0.0, 1.0)]))
    (box,) = r.user_boxes
    assert (box.width, box.height) == (2.0, 2.0)
    cells = r.channels[3, int(box.y_min):int(box.y_max), int(box.x_min):int(box.x_max)]
    assert np.all(cells == 1) and r.channels[3].sum() == 4


def test_stationary_user_has_zero_velocity():
    r = rasterize(make_scene([RoadUser(0, "car", 1.75, -2.0, NORTH, 0.0)]))
    (box,) = r.user_boxes
    assert r.channels[2].sum() == box.area
    assert np.all(r.channels[5:] == 0)


def test_velocity_channels_painted():
    r = rasterize(make_scene([RoadUser(0, "cyclist", 5.0, -5.0, 0.0, 4.0)]))
    (box,) = r.user_boxes
    sl = np.s_[int(box.y_min):int(box.y_max), int(box.x_min):int(box.x_max)]
    assert np.allclose(r.channels[5][sl], 0.0) and np.allclose(r.channels[6][sl], 4.0)


def test_user_outside_window_is_dropped():
    r = rasterize(make_scene([RoadUser(0, "car", 60.0, 0.0, 0.0, 1.0)]))
    assert r.user_boxes == [] and r.user_ids == []


def test_raster_invariants(corpus):
    for sid in list(corpus.scenes)[:150]:
        r = corpus.raster(sid)
        for ch in range(5):
            assert set(np.unique(r.channels[ch])) <= {0.0, 1.0}
        assert np.all(np.isfinite(r.channels))
        for box in r.user_boxes:
            assert 0 <= box.x_min < box.x_max <= 96 and 0 <= box.y_min < box.y_max <= 96
        assert r.user_ids == sorted(r.user_ids)


def test_footprints_fixed():
    assert FOOTPRINTS == {"car": (4.5, 1.8), "cyclist": (1.8, 0.6), "pedestrian": (0.6, 0.6)}


# -- dataset -------------------------------------------------------------------------


def test_dataset_files_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    generate_dataset(100, 7, out_dir=str(a))
    generate_dataset(100, 7, out_dir=str(b))
    for name in (MANIFEST_FILE, SCENES_FILE, RASTER_FILE):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_dataset_round_trip(tmp_path):
    ds = Dataset.generate(30, 2)
    ds.save(str(tmp_path))
    back = Dataset.load(str(tmp_path))
    assert back.manifest == json.loads(json.dumps(ds.manifest))
    np.testing.assert_array_equal(back.raster(5).channels, ds.raster(5).channels)
    assert back.raster(5).user_boxes == ds.raster(5).user_boxes


def test_load_missing_dir_names_path(tmp_path):
    missing = os.path.join(str(tmp_path), "nope")
    with pytest.raises(OSError, match="nope"):
        Dataset.load(missing)


def test_generate_rejects_empty():
    with pytest.raises(UsageError):
        Dataset.generate(0, 1)


def test_train_split_annotated_only(corpus):
    for sid in corpus.ids("train"):
        assert corpus.scenes[sid].n_important >= 1
    for sid in corpus.ids("train_unannotated"):
        assert corpus.scenes[sid].n_important == 0


def test_split_fractions(corpus):
    stats = corpus.manifest["stats"]
    assert stats["train_fraction"] == pytest.approx(0.74, abs=0.03)
    assert stats["test_fraction"] == pytest.approx(0.26, abs=0.03)
    assert len(corpus.ids("test")) == len(corpus.ids("test_annotated")) + sum(
        corpus.scenes[s].n_important == 0 for s in corpus.ids("test"))


def test_manifest_config_regenerates_same_scenes():
    from icare.scenegen.dataset import scene_config_from_dict

    ds = Dataset.generate(40, 6)
    manifest = json.loads(json.dumps(ds.manifest, sort_keys=True))
    again = Dataset.generate(40, 6, scene_config_from_dict(manifest["config"]))
    assert again.manifest == ds.manifest
