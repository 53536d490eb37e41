"""Intersection layout, scene records and ego path kinematics.

World frame: metres, intersection centre at the origin, x east, y north,
headings in radians counter-clockwise from east. Traffic keeps right, so the
ego-vehicle approaches northbound in the lane centred at x = +LANE_WIDTH/2.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

LANE_WIDTH = 3.5
ROAD_HALF_WIDTH = LANE_WIDTH  # two lanes, one per direction
CROSSWALK_NEAR = 4.5
CROSSWALK_FAR = 6.5
HORIZON_STEPS = 10
MAX_STEER_DEG = 12.0

INTENTS = ("left", "straight", "right")
KINDS = ("car", "pedestrian", "cyclist")
FOOTPRINTS = {"car": (4.5, 1.8), "cyclist": (1.8, 0.6), "pedestrian": (0.6, 0.6)}
SPEED_LIMITS = {"car": 12.0, "cyclist": 6.0, "pedestrian": 1.8}
EGO_SPEED_RANGE = (2.0, 10.0)
EGO_DISTANCE_RANGE = (14.0, 24.0)
# lateral position inside the approach lane reveals where the driver is heading
EGO_LANE_OFFSET = {"left": -0.6, "straight": 0.0, "right": 0.6}
TURN_RADIUS_RANGE = (8.0, 12.0)
STATIONARY_SPEED = 0.2


@dataclass
class EgoState:
    x: float
    y: float
    heading: float
    speed: float
    intent: str
    turn_radius: float = 10.0

    @property
    def position(self):
        return (self.x, self.y)


@dataclass
class RoadUser:
    id: int
    kind: str
    x: float
    y: float
    heading: float
    speed: float
    template: str = ""
    important: bool = False
    important_alt: bool = False
    min_distance: float = math.inf

    @property
    def position(self):
        return (self.x, self.y)

    @property
    def footprint(self):
        return FOOTPRINTS[self.kind]

    @property
    def velocity(self):
        return np.array([self.speed * math.cos(self.heading), self.speed * math.sin(self.heading)])


@dataclass
class Scene:
    id: int
    ego: EgoState
    users: list
    gt_path: list
    world: dict = field(default_factory=lambda: dict(WORLD))

    @property
    def n_important(self):
        return sum(u.important for u in self.users)

    def to_dict(self):
        return {
            "id": self.id,
            "ego": asdict(self.ego),
            "users": [asdict(u) for u in self.users],
            "gt_path": [float(a) for a in self.gt_path],
            "world": self.world,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            id=int(d["id"]),
            ego=EgoState(**d["ego"]),
            users=[RoadUser(**u) for u in d["users"]],
            gt_path=[float(a) for a in d["gt_path"]],
            world=dict(d["world"]),
        )


WORLD = {
    "lane_width": LANE_WIDTH,
    "lanes_per_road": 2,
    "crosswalk_near": CROSSWALK_NEAR,
    "crosswalk_far": CROSSWALK_FAR,
    "window_m": 48.0,
    "cell_m": 0.5,
}


def arc_start_y(intent: str, radius: float) -> float:
    """World y at which a turn arc begins so that it ends centred in the target lane."""
    if intent == "left":
        return LANE_WIDTH / 2 - radius
    if intent == "right":
        return -LANE_WIDTH / 2 - radius
    return math.inf


def ego_path_ground_truth(ego: EgoState, rng=None, jitter_deg=0.3) -> list:
    """Heading change (degrees, positive = left) for each of the next 10 one-metre steps.

    Turns follow a circular arc of radius ``ego.turn_radius`` starting at
    :func:`arc_start_y`; a step straddling the arc start gets the turn rate
    pro rata. Gaussian jitter is added and values are clamped to +-12 deg.
    """
    rate = math.degrees(1.0 / ego.turn_radius)
    sign = {"left": 1.0, "right": -1.0, "straight": 0.0}[ego.intent]
    start = arc_start_y(ego.intent, ego.turn_radius) - ego.y  # metres travelled before the arc
    arc_length = 0.5 * math.pi * ego.turn_radius
    angles = []
    for step in range(HORIZON_STEPS):
        lo, hi = float(step), float(step + 1)
        on_arc = max(0.0, min(hi, start + arc_length) - max(lo, start)) if sign else 0.0
        angles.append(sign * rate * on_arc)
    angles = np.array(angles)
    if rng is not None and jitter_deg > 0:
        angles = angles + rng.normal(0.0, jitter_deg, size=HORIZON_STEPS)
    return [float(a) for a in np.clip(angles, -MAX_STEER_DEG, MAX_STEER_DEG)]


def unroll_path(x, y, heading, path) -> np.ndarray:
    """Positions of the ego at steps 0..10: turn by each angle, then advance one metre."""
    pts = np.empty((len(path) + 1, 2))
    pts[0] = (x, y)
    h = heading
    for i, angle in enumerate(path):
        h += math.radians(angle)
        pts[i + 1] = (pts[i][0] + math.cos(h), pts[i][1] + math.sin(h))
    return pts


def unroll_ego(scene_or_ego, path=None) -> np.ndarray:
    if isinstance(scene_or_ego, Scene):
        ego, path = scene_or_ego.ego, scene_or_ego.gt_path
    else:
        ego = scene_or_ego
    return unroll_path(ego.x, ego.y, ego.heading, path)


def point_in_road(x, y):
    return (np.abs(x) <= ROAD_HALF_WIDTH) | (np.abs(y) <= ROAD_HALF_WIDTH)


def point_in_crosswalk(x, y):
    ax, ay = np.abs(x), np.abs(y)
    along_ns = (ax <= ROAD_HALF_WIDTH) & (ay >= CROSSWALK_NEAR) & (ay <= CROSSWALK_FAR)
    along_ew = (ay <= ROAD_HALF_WIDTH) & (ax >= CROSSWALK_NEAR) & (ax <= CROSSWALK_FAR)
    return along_ns | along_ew
