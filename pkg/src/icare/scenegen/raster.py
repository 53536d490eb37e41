"""Top-down 7-channel rasterisation of a scene, ego at the bottom centre, north up."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from icare.geometry import Box
from icare.scenegen.generate import window_bounds, world_aabb
from icare.scenegen.world import WORLD, Scene, point_in_crosswalk, point_in_road

CELL_M = WORLD["cell_m"]
RASTER_SIZE = int(round(WORLD["window_m"] / CELL_M))
CHANNELS = ("road", "crosswalk", "car", "pedestrian", "cyclist", "vel_sin", "vel_cos")
KIND_CHANNEL = {"car": 2, "pedestrian": 3, "cyclist": 4}


@dataclass
class Raster:
    channels: np.ndarray  # [7 x 96 x 96]
    user_boxes: list  # Box per rasterised user, aligned with user_ids
    user_ids: list

    @property
    def shape(self):
        return self.channels.shape


def _cell_centres(scene):
    x0, _, _, y1 = window_bounds(scene.ego)
    idx = (np.arange(RASTER_SIZE) + 0.5) * CELL_M
    xs = x0 + idx
    ys = y1 - idx
    return np.meshgrid(xs, ys)  # [row, col] grids of world x and y


def user_box(scene, user):
    """Raster footprint: ceil(extent / cell) cells centred on the user, clipped; None if outside."""
    x0, _, _, y1 = window_bounds(scene.ego)
    ax0, ay0, ax1, ay1 = world_aabb(user.kind, user.x, user.y, user.heading)
    n_cols = max(1, math.ceil(round((ax1 - ax0) / CELL_M, 6)))
    n_rows = max(1, math.ceil(round((ay1 - ay0) / CELL_M, 6)))
    c0 = int(round((user.x - x0) / CELL_M - n_cols / 2))
    r0 = int(round((y1 - user.y) / CELL_M - n_rows / 2))
    c1, r1 = c0 + n_cols, r0 + n_rows
    if c1 <= 0 or r1 <= 0 or c0 >= RASTER_SIZE or r0 >= RASTER_SIZE:
        return None
    return Box(float(max(c0, 0)), float(max(r0, 0)), float(min(c1, RASTER_SIZE)), float(min(r1, RASTER_SIZE)))


def rasterize(scene: Scene) -> Raster:
    out = np.zeros((len(CHANNELS), RASTER_SIZE, RASTER_SIZE))
    wx, wy = _cell_centres(scene)
    out[0] = point_in_road(wx, wy)
    out[1] = point_in_crosswalk(wx, wy)
    boxes, ids = [], []
    for user in scene.users:
        box = user_box(scene, user)
        if box is None:
            continue
        r0, r1, c0, c1 = int(box.y_min), int(box.y_max), int(box.x_min), int(box.x_max)
        out[KIND_CHANNEL[user.kind], r0:r1, c0:c1] = 1.0
        out[5, r0:r1, c0:c1] = user.speed * math.sin(user.heading)
        out[6, r0:r1, c0:c1] = user.speed * math.cos(user.heading)
        boxes.append(box)
        ids.append(user.id)
    return Raster(out, boxes, ids)
