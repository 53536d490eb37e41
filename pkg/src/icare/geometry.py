"""Axis-aligned box algebra: IoU, NMS, RoI max pooling and the location feature.

Boxes live in raster pixel coordinates with y growing downward, so the
bottom edge ``y_max`` is the side nearest the ego-vehicle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from icare.numcore.tensor import Tensor


@dataclass(frozen=True)
class Box:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError(f"invalid box {self}")

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return self.width * self.height

    def as_array(self):
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=np.float64)

    def clip(self, width, height):
        return Box(
            min(max(self.x_min, 0.0), width),
            min(max(self.y_min, 0.0), height),
            min(max(self.x_max, 0.0), width),
            min(max(self.y_max, 0.0), height),
        )

    def scaled(self, factor):
        return Box(self.x_min * factor, self.y_min * factor, self.x_max * factor, self.y_max * factor)


def _as_xyxy(b):
    return b.as_array() if isinstance(b, Box) else np.asarray(b, dtype=np.float64)


def iou(a, b) -> float:
    a, b = _as_xyxy(a), _as_xyxy(b)
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union) if union > 0 else 0.0


def iou_matrix(a, b):
    """Pairwise IoU between [N x 4] and [M x 4] xyxy arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def score_order(scores):
    """Indices by descending score; equal scores keep ascending index order."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(scores.size), -scores))


def nms(boxes, scores, iou_threshold=0.7, max_keep=None, min_score=None):
    """Greedy non-maximum suppression.

    Returns kept indices in descending score order. A box is suppressed when
    its IoU with an already-kept box is strictly greater than the threshold.
    ``min_score`` drops boxes below it before suppression; ``max_keep`` stops
    once that many boxes are kept.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    order = score_order(scores)
    if min_score is not None:
        order = order[np.asarray(scores, dtype=np.float64)[order] >= min_score]
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    keep = []
    while order.size:
        i = order[0]
        keep.append(int(i))
        if max_keep is not None and len(keep) >= max_keep:
            break
        rest = order[1:]
        iw = np.minimum(boxes[i, 2], boxes[rest, 2]) - np.maximum(boxes[i, 0], boxes[rest, 0])
        ih = np.minimum(boxes[i, 3], boxes[rest, 3]) - np.maximum(boxes[i, 1], boxes[rest, 1])
        inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
        union = areas[i] + areas[rest] - inter
        with np.errstate(invalid="ignore", divide="ignore"):
            overlap = np.where(union > 0, inter / union, 0.0)
        order = rest[overlap <= iou_threshold]
    return keep


def roi_bins(start, extent, bins, limit):
    """Cell ranges [lo, hi) of each bin along one axis (floor/ceil edges, clamped, at least one cell)."""
    ranges = []
    for i in range(bins):
        lo = math.floor(start + i * extent / bins)
        hi = math.ceil(start + (i + 1) * extent / bins)
        lo = min(max(lo, 0), limit - 1)
        hi = min(max(hi, lo + 1), limit)
        ranges.append((lo, hi))
    return ranges


def roi_pool_indices(height, width, roi: Box, output=4):
    """Flat cell index ranges for every bin; shared by forward and backward."""
    roi = roi.clip(width, height)
    if roi.width <= 0 or roi.height <= 0:
        # degenerate RoI: every bin reads the single containing cell
        r = min(int(math.floor(roi.y_min)), height - 1)
        c = min(int(math.floor(roi.x_min)), width - 1)
        cell = ((r, r + 1), (c, c + 1))
        return [[cell] * output for _ in range(output)]
    rows = roi_bins(roi.y_min, roi.height, output, height)
    cols = roi_bins(roi.x_min, roi.width, output, width)
    return [[(rows[i], cols[j]) for j in range(output)] for i in range(output)]


def roi_pool_array(feature_map, roi: Box, output=4):
    """Max-pool ``feature_map`` [C x H x W] inside ``roi`` into [C x P x P].

    Also returns the flat (row * W + col) argmax per output cell for backward.
    """
    fm = np.asarray(feature_map)
    c, h, w = fm.shape
    out = np.empty((c, output, output), dtype=fm.dtype)
    arg = np.empty((c, output, output), dtype=np.int64)
    for i, row_bins in enumerate(roi_pool_indices(h, w, roi, output)):
        for j, ((r0, r1), (c0, c1)) in enumerate(row_bins):
            patch = fm[:, r0:r1, c0:c1].reshape(c, -1)
            k = patch.argmax(axis=1)
            out[:, i, j] = patch[np.arange(c), k]
            pw = c1 - c0
            arg[:, i, j] = (r0 + k // pw) * w + (c0 + k % pw)
    return out, arg


def roi_pool(feature_map: Tensor, roi: Box, output=4) -> Tensor:
    """Differentiable RoI max pooling; the gradient flows to each bin's argmax cell."""
    fm = feature_map.data
    c, h, w = fm.shape
    out, arg = roi_pool_array(fm, roi, output)

    def backward(g):
        grad = np.zeros((c, h * w), dtype=g.dtype)
        rows = np.repeat(np.arange(c), output * output)
        np.add.at(grad, (rows, arg.reshape(-1)), g.reshape(-1))
        return (grad.reshape(c, h, w),)

    return Tensor.from_op(out, (feature_map,), backward)


@dataclass(frozen=True)
class LocationFeature:
    cx_bottom: float
    y_bottom: float
    h: float
    w: float
    normalized: tuple

    def raw(self):
        return np.array([self.cx_bottom, self.y_bottom, self.h, self.w], dtype=np.float64)

    def as_array(self):
        return np.array(self.normalized, dtype=np.float64)


def location_feature(box: Box, raster_w, raster_h) -> LocationFeature:
    """[(x_max + x_min) / 2, y_max, h, w], plus the raster-normalised copy."""
    cx = (box.x_max + box.x_min) / 2.0
    yb = box.y_max
    h = box.y_max - box.y_min
    w = box.x_max - box.x_min
    return LocationFeature(cx, yb, h, w, (cx / raster_w, yb / raster_h, h / raster_h, w / raster_w))
