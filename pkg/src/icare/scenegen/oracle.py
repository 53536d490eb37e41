"""Rule-based importance labels from a kinematic separation test."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from icare.scenegen.world import STATIONARY_SPEED, Scene, unroll_ego


@dataclass(frozen=True)
class OracleConfig:
    r_safe: float = 4.0
    corridor_halfwidth: float = 1.5
    horizon_steps: int = 10
    boundary_band: float = 1.0
    flip_prob: float = 0.05
    # second annotator: tighter thresholds plus boundary flips
    r_safe_alt: float = 3.0
    corridor_halfwidth_alt: float = 1.0

    def __post_init__(self):
        for name in ("r_safe", "corridor_halfwidth", "boundary_band", "r_safe_alt", "corridor_halfwidth_alt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.horizon_steps <= 0:
            raise ValueError("horizon_steps must be positive")
        if not 0.0 <= self.flip_prob < 1.0:
            raise ValueError("flip_prob must lie in [0, 1)")

    def alt(self):
        return replace(self, r_safe=self.r_safe_alt, corridor_halfwidth=self.corridor_halfwidth_alt)


def point_to_polyline(point, polyline) -> float:
    p = np.asarray(point, dtype=np.float64)
    a, b = polyline[:-1], polyline[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    closest = a + t[:, None] * ab
    return float(np.min(np.linalg.norm(closest - p, axis=1)))


def user_separation(scene: Scene, horizon_steps=10):
    """Per user: (min centre distance over the matched timestamps, distance to the ego path polyline)."""
    waypoints = unroll_ego(scene)[: horizon_steps + 1]
    times = np.arange(len(waypoints)) / scene.ego.speed
    out = []
    for user in scene.users:
        traj = np.asarray(user.position) + times[:, None] * user.velocity[None, :]
        d_min = float(np.min(np.linalg.norm(traj - waypoints, axis=1)))
        out.append((d_min, point_to_polyline(user.position, waypoints)))
    return out


def importance_oracle(scene: Scene, cfg: OracleConfig = OracleConfig()):
    """Labels plus min distances: important iff the user comes within ``r_safe``
    of the ego at a matched timestamp, or is stationary within the corridor."""
    labels, dists = [], []
    for user, (d_min, d_path) in zip(scene.users, user_separation(scene, cfg.horizon_steps)):
        stationary = user.speed < STATIONARY_SPEED
        labels.append(bool(d_min <= cfg.r_safe or (stationary and d_path <= cfg.corridor_halfwidth)))
        dists.append(d_min)
    return labels, dists


def annotator_rng(seed, scene_id):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(scene_id), 2])))


def perturb_annotations(scene: Scene, cfg: OracleConfig = OracleConfig(), seed=0):
    """Second-annotator labels: tighter oracle, then seeded flips near the decision boundary."""
    labels, dists = importance_oracle(scene, cfg.alt())
    rng = annotator_rng(seed, scene.id)
    draws = rng.random(len(labels))
    out = []
    for label, d, u in zip(labels, dists, draws):
        if abs(d - cfg.r_safe_alt) <= cfg.boundary_band and u < cfg.flip_prob:
            label = not label
        out.append(label)
    return out
