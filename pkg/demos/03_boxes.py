"""Box utilities: IoU, non-maximum suppression, RoI pooling, location features.

    python demos/03_boxes.py
"""
import numpy as np

from icare.geometry import Box, iou_matrix, location_feature, nms, roi_pool_array

boxes = np.array([
    [10, 10, 20, 20],
    [11, 11, 21, 21],  # near duplicate of the first
    [40, 40, 50, 52],
    [12, 30, 18, 38],
], dtype=float)
scores = np.array([0.9, 0.8, 0.7, 0.3])

print("pairwise IoU")
print(np.round(iou_matrix(boxes, boxes), 3))
print("kept by NMS at 0.5:", list(nms(boxes, scores, 0.5)))

fmap = np.arange(36, dtype=float).reshape(1, 6, 6)
pooled, _ = roi_pool_array(fmap, Box(1.0, 1.0, 5.0, 5.0), 2)
print("\nfeature map\n", fmap[0])
print("RoI (1,1)-(5,5) pooled to 2x2\n", pooled[0])

loc = location_feature(Box(*boxes[2]), 96, 96)
print("\nlocation feature [bottom centre x, bottom y, h, w]:", loc.raw().tolist())
