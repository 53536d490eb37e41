"""Seeded scene sampling from a fixed set of road-user placement templates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from icare.scenegen.oracle import OracleConfig, importance_oracle, perturb_annotations
from icare.scenegen.world import (
    EGO_DISTANCE_RANGE,
    EGO_LANE_OFFSET,
    EGO_SPEED_RANGE,
    FOOTPRINTS,
    INTENTS,
    LANE_WIDTH,
    TURN_RADIUS_RANGE,
    WORLD,
    EgoState,
    RoadUser,
    Scene,
    ego_path_ground_truth,
)

HALF_PI = 0.5 * math.pi
WINDOW_M = WORLD["window_m"]
EGO_BOTTOM_MARGIN = 1.0

DEFAULT_TEMPLATE_WEIGHTS = {
    "leading_car": 0.22,
    "oncoming_car": 0.16,
    "crossing_car": 0.06,
    "parked_car": 0.06,
    "pedestrian": 0.28,
    "cyclist": 0.22,
}


@dataclass(frozen=True)
class SceneConfig:
    min_users: int = 0
    max_users: int = 8
    path_jitter_deg: float = 0.3
    template_weights: tuple = tuple(DEFAULT_TEMPLATE_WEIGHTS.items())
    oracle: OracleConfig = field(default_factory=OracleConfig)

    def __post_init__(self):
        if not 0 <= self.min_users <= self.max_users:
            raise ValueError("need 0 <= min_users <= max_users")


def scene_rng(seed, scene_id, stream=0):
    """Independent counter-based (Philox) stream per (seed, scene id, stream)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(scene_id), int(stream)])))


def window_bounds(ego: EgoState):
    """(x0, x1, y0, y1) of the square window with the ego at its bottom centre."""
    y0 = ego.y - EGO_BOTTOM_MARGIN
    return ego.x - WINDOW_M / 2, ego.x + WINDOW_M / 2, y0, y0 + WINDOW_M


def _moving(rng, p_stopped, lo, hi):
    return 0.0 if rng.random() < p_stopped else float(rng.uniform(lo, hi))


def _leading_car(rng, ego):
    x = LANE_WIDTH / 2 + rng.uniform(-0.2, 0.2)
    return "car", x, ego.y + rng.uniform(5.0, 11.0), HALF_PI, _moving(rng, 0.35, 2.0, 12.0)


def _oncoming_car(rng, ego):
    x = -LANE_WIDTH / 2 - 0.6 + rng.uniform(-0.1, 0.1)
    return "car", x, ego.y + rng.uniform(6.0, 30.0), -HALF_PI, _moving(rng, 0.15, 3.0, 12.0)


def _crossing_car(rng, ego):
    x0, x1, _, _ = window_bounds(ego)
    eastbound = rng.random() < 0.5
    approaching = rng.random() < 0.7
    y = -LANE_WIDTH / 2 - 0.3 if eastbound else LANE_WIDTH / 2 + 0.3
    heading = 0.0 if eastbound else math.pi
    from_west = eastbound == approaching
    if approaching and rng.random() < 0.25:
        dist, speed = rng.uniform(7.0, 10.0), 0.0
    else:
        dist, speed = None, float(rng.uniform(3.0, 12.0))
    if dist is None:
        x = rng.uniform(x0 + 1.0, -6.0) if from_west else rng.uniform(6.0, x1 - 1.0)
    else:
        x = -dist if from_west else dist
    return "car", x, y, heading, speed


def _parked_car(rng, ego):
    x0, x1, _, _ = window_bounds(ego)
    side = 1.0 if rng.random() < 0.5 else -1.0
    if rng.random() < 0.6:
        x = side * rng.uniform(6.2, 7.5)
        return "car", x, rng.uniform(ego.y + 1.0, -9.0), side * HALF_PI, 0.0
    y = -rng.uniform(6.2, 7.5)
    x = rng.uniform(8.0, x1 - 2.5) if side > 0 else rng.uniform(x0 + 2.5, -8.0)
    return "car", x, y, 0.0 if side > 0 else math.pi, 0.0


def _pedestrian(rng, ego):
    u = rng.random()
    if u < 0.45:  # mid-block crossing ahead of the ego
        heading = 0.0 if rng.random() < 0.5 else math.pi
        x = rng.uniform(-5.0, 5.0)
        return "pedestrian", x, ego.y + rng.uniform(3.0, 11.0), heading, _moving(rng, 0.2, 0.8, 1.8)
    u = rng.random()
    if u < 0.4:  # south crosswalk, crossing or waiting at the kerb
        if rng.random() < 0.8:
            x, speed = rng.uniform(-5.0, 5.0), rng.uniform(0.8, 1.8)
        else:
            x, speed = rng.choice([-1.0, 1.0]) * rng.uniform(3.6, 5.0), 0.0
        heading = 0.0 if rng.random() < 0.5 else math.pi
        return "pedestrian", x, rng.uniform(-6.3, -4.7), heading, speed
    if u < 0.6:  # east crosswalk
        heading = HALF_PI if rng.random() < 0.5 else -HALF_PI
        return "pedestrian", rng.uniform(4.7, 6.3), rng.uniform(-5.0, 5.0), heading, _moving(rng, 0.2, 0.8, 1.8)
    if u < 0.7:  # west crosswalk
        heading = HALF_PI if rng.random() < 0.5 else -HALF_PI
        return "pedestrian", -rng.uniform(4.7, 6.3), rng.uniform(-5.0, 5.0), heading, _moving(rng, 0.2, 0.8, 1.8)
    side = 1.0 if rng.random() < 0.5 else -1.0
    heading = HALF_PI if rng.random() < 0.5 else -HALF_PI
    y = ego.y + rng.uniform(1.0, 30.0)
    return "pedestrian", side * rng.uniform(4.2, 6.0), y, heading, _moving(rng, 0.25, 0.8, 1.6)


def _cyclist(rng, ego):
    if rng.random() < 0.7:
        x = 3.0 + rng.uniform(-0.15, 0.15)
        return "cyclist", x, ego.y + rng.uniform(2.5, 9.0), HALF_PI, float(rng.uniform(2.0, 6.0))
    x = -3.0 + rng.uniform(-0.15, 0.15)
    return "cyclist", x, ego.y + rng.uniform(5.0, 45.0), -HALF_PI, float(rng.uniform(2.0, 6.0))


TEMPLATES = {
    "leading_car": _leading_car,
    "oncoming_car": _oncoming_car,
    "crossing_car": _crossing_car,
    "parked_car": _parked_car,
    "pedestrian": _pedestrian,
    "cyclist": _cyclist,
}


def world_aabb(kind, x, y, heading, pad=0.0):
    length, width = FOOTPRINTS[kind]
    c, s = abs(math.cos(heading)), abs(math.sin(heading))
    ex = round(length * c + width * s, 9) / 2 + pad
    ey = round(length * s + width * c, 9) / 2 + pad
    return x - ex, y - ey, x + ex, y + ey


def _overlaps(a, b):
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def sample_ego(rng):
    intent = INTENTS[int(rng.integers(0, 3))]
    offset = EGO_LANE_OFFSET[intent] + rng.uniform(-0.1, 0.1)
    return EgoState(
        x=LANE_WIDTH / 2 + offset,
        y=-rng.uniform(*EGO_DISTANCE_RANGE),
        heading=HALF_PI,
        speed=float(rng.uniform(*EGO_SPEED_RANGE)),
        intent=intent,
        turn_radius=float(rng.uniform(*TURN_RADIUS_RANGE)),
    )


def generate_scene(seed, scene_id, cfg: SceneConfig = SceneConfig(), annotator_seed=None) -> Scene:
    """Deterministic scene for (seed, scene_id): ego, users, path and both label sets."""
    rng = scene_rng(seed, scene_id, 0)
    ego = sample_ego(rng)
    gt_path = ego_path_ground_truth(ego, rng, cfg.path_jitter_deg)

    names = [name for name, _ in cfg.template_weights]
    weights = np.array([w for _, w in cfg.template_weights], dtype=np.float64)
    weights = weights / weights.sum()
    n_users = int(rng.integers(cfg.min_users, cfg.max_users + 1))
    x0, x1, y0, y1 = window_bounds(ego)
    occupied = [world_aabb("car", ego.x, ego.y, ego.heading, pad=0.3)]
    users = []
    for _ in range(n_users):
        template = names[int(rng.choice(len(names), p=weights))]
        for _attempt in range(20):
            kind, x, y, heading, speed = TEMPLATES[template](rng, ego)
            box = world_aabb(kind, x, y, heading, pad=0.2)
            inside = x0 + 0.5 <= x <= x1 - 0.5 and y0 + 0.5 <= y <= y1 - 0.5
            if inside and not any(_overlaps(box, other) for other in occupied):
                occupied.append(box)
                users.append(RoadUser(len(users), kind, float(x), float(y), float(heading), float(speed), template))
                break

    scene = Scene(scene_id, ego, users, gt_path)
    label_scene(scene, cfg.oracle, seed if annotator_seed is None else annotator_seed)
    return scene


def label_scene(scene: Scene, oracle: OracleConfig, annotator_seed):
    labels, dists = importance_oracle(scene, oracle)
    alt = perturb_annotations(scene, oracle, annotator_seed)
    for user, label, d, label_alt in zip(scene.users, labels, dists, alt):
        user.important = bool(label)
        user.min_distance = float(d)
        user.important_alt = bool(label_alt)
    return scene
