"""Slow, obviously-correct reference implementations used as test oracles."""
import math
from fractions import Fraction


def iou_exact(a, b):
    """IoU in exact rational arithmetic."""
    a = [Fraction(v) for v in a]
    b = [Fraction(v) for v in b]
    iw = max(Fraction(0), min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(Fraction(0), min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union) if union > 0 else 0.0


def nms_bruteforce(boxes, scores, threshold):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        if all(iou_exact(boxes[i], boxes[k]) <= threshold for k in kept):
            kept.append(i)
    return kept


def roi_pool_bruteforce(fmap, roi, p):
    """Per-bin max following the floor/ceil/clamp rule, written cell by cell."""
    c, h, w = len(fmap), len(fmap[0]), len(fmap[0][0])
    x0, y0 = min(max(roi[0], 0.0), w), min(max(roi[1], 0.0), h)
    x1, y1 = min(max(roi[2], 0.0), w), min(max(roi[3], 0.0), h)
    out = [[[None] * p for _ in range(p)] for _ in range(c)]
    for i in range(p):
        for j in range(p):
            if x1 - x0 <= 0 or y1 - y0 <= 0:
                rows = [min(int(math.floor(y0)), h - 1)]
                cols = [min(int(math.floor(x0)), w - 1)]
            else:
                r_lo = min(max(math.floor(y0 + i * (y1 - y0) / p), 0), h - 1)
                r_hi = min(max(math.ceil(y0 + (i + 1) * (y1 - y0) / p), r_lo + 1), h)
                c_lo = min(max(math.floor(x0 + j * (x1 - x0) / p), 0), w - 1)
                c_hi = min(max(math.ceil(x0 + (j + 1) * (x1 - x0) / p), c_lo + 1), w)
                rows, cols = range(r_lo, r_hi), range(c_lo, c_hi)
            for ch in range(c):
                out[ch][i][j] = max(fmap[ch][r][q] for r in rows for q in cols)
    return out


def pr_bruteforce(scores, tp_flags, n_gt):
    """Every distinct threshold, confusion counts rebuilt from scratch each time."""
    points = []
    for t in sorted(set(scores)):
        tp = sum(1 for s, f in zip(scores, tp_flags) if s >= t and f)
        fp = sum(1 for s, f in zip(scores, tp_flags) if s >= t and not f)
        fn = n_gt - tp
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / (tp + fn)
        points.append((t, precision, recall))
    return points


def f1_bruteforce(points, operating=0.5):
    def f1(p, r):
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    best = max(f1(p, r) for _, p, r in points)
    at = [f1(p, r) for t, p, r in points if t >= operating]
    return best, (at[0] if at else 0.0)


def location_by_hand(x_min, y_min, x_max, y_max):
    return [(x_max + x_min) / 2.0, y_max, y_max - y_min, x_max - x_min]
