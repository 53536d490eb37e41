"""Stage 1: anchor-based proposal network for important road users.

A three-layer convolutional backbone (feature stride 4) feeds two 1x1
heads: one objectness logit and four box deltas per anchor. Proposals are
decoded, clipped, suppressed with NMS and thresholded on objectness; each
one carries a RoI-pooled appearance vector taken from the backbone map.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from icare.errors import UsageError
from icare.geometry import Box, iou_matrix, nms, roi_pool_array
from icare.numcore import functional as F
from icare.numcore.nn import Conv2d, Module, ReLU, Sequential
from icare.numcore.optim import Adam, AdamConfig
from icare.numcore.serialize import load_checkpoint, save_checkpoint
from icare.numcore.tensor import Tensor, no_grad
from icare.scenegen.raster import RASTER_SIZE

FEATURE_STRIDE = 4
ANCHOR_SCALES = (4.0, 8.0, 16.0)
ANCHOR_RATIOS = (0.5, 1.0, 2.0)
ROI_OUTPUT = 4
BACKBONE_CHANNELS = 32
APPEARANCE_DIM = BACKBONE_CHANNELS * ROI_OUTPUT * ROI_OUTPUT
DELTA_CLAMP = math.log(1000.0 / 16.0)


def make_anchors(feature_size=RASTER_SIZE // FEATURE_STRIDE, stride=FEATURE_STRIDE,
                 scales=ANCHOR_SCALES, ratios=ANCHOR_RATIOS):
    """[H*W*A x 4] xyxy anchors, ordered by (row, col, anchor); ratio is height / width."""
    shapes = []
    for s in scales:
        for r in ratios:
            shapes.append((s / math.sqrt(r), s * math.sqrt(r)))
    shapes = np.array(shapes)  # (A, 2) as (w, h)
    centres = (np.arange(feature_size) + 0.5) * stride
    cy, cx = np.meshgrid(centres, centres, indexing="ij")
    cx = cx[:, :, None]
    cy = cy[:, :, None]
    w, h = shapes[:, 0], shapes[:, 1]
    anchors = np.stack(
        np.broadcast_arrays(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2), axis=-1
    )
    return anchors.reshape(-1, 4)


def clip_boxes(boxes, width=RASTER_SIZE, height=RASTER_SIZE):
    out = np.array(boxes, dtype=np.float64, copy=True)
    out[:, [0, 2]] = np.clip(out[:, [0, 2]], 0.0, width)
    out[:, [1, 3]] = np.clip(out[:, [1, 3]], 0.0, height)
    return out


def _centre_size(boxes):
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    return boxes[:, 0] + 0.5 * w, boxes[:, 1] + 0.5 * h, w, h


def encode_boxes(gt, anchors):
    """Regression targets (tx, ty, tw, th) of ``gt`` relative to ``anchors`` (both [N x 4])."""
    xg, yg, wg, hg = _centre_size(np.asarray(gt, dtype=np.float64).reshape(-1, 4))
    xa, ya, wa, ha = _centre_size(np.asarray(anchors, dtype=np.float64).reshape(-1, 4))
    return np.stack([(xg - xa) / wa, (yg - ya) / ha, np.log(wg / wa), np.log(hg / ha)], axis=1)


def decode_boxes(anchors, deltas, clip=True, width=RASTER_SIZE, height=RASTER_SIZE):
    xa, ya, wa, ha = _centre_size(np.asarray(anchors, dtype=np.float64).reshape(-1, 4))
    d = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    x = xa + d[:, 0] * wa
    y = ya + d[:, 1] * ha
    w = wa * np.exp(np.minimum(d[:, 2], DELTA_CLAMP))
    h = ha * np.exp(np.minimum(d[:, 3], DELTA_CLAMP))
    boxes = np.stack([x - w / 2, y - h / 2, x + w / 2, y + h / 2], axis=1)
    return clip_boxes(boxes, width, height) if clip else boxes


@dataclass
class AnchorTargets:
    labels: np.ndarray  # 1 positive, 0 negative, -1 ignore
    deltas: np.ndarray  # [A x 4], meaningful where labels == 1
    max_iou: np.ndarray


def assign_anchors(anchors, gt_boxes, pos_iou=0.5, neg_iou=0.3) -> AnchorTargets:
    """Label anchors against important ground-truth boxes.

    Positive: IoU >= ``pos_iou`` with some GT, or the best anchor for a GT.
    Negative: max IoU < ``neg_iou``. Everything else is ignored.
    """
    anchors = clip_boxes(anchors)
    n = anchors.shape[0]
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    labels = np.full(n, -1, dtype=np.int64)
    deltas = np.zeros((n, 4))
    if gt.shape[0] == 0:
        labels[:] = 0
        return AnchorTargets(labels, deltas, np.zeros(n))
    ious = iou_matrix(anchors, gt)
    best_gt = ious.argmax(axis=1)
    max_iou = ious[np.arange(n), best_gt]
    labels[max_iou < neg_iou] = 0
    labels[max_iou >= pos_iou] = 1
    gt_best = ious.max(axis=0)
    for g in range(gt.shape[0]):
        if gt_best[g] > 0:
            labels[ious[:, g] == gt_best[g]] = 1
    pos = labels == 1
    valid = pos & ((anchors[:, 2] - anchors[:, 0]) > 0) & ((anchors[:, 3] - anchors[:, 1]) > 0)
    deltas[valid] = encode_boxes(gt[best_gt[valid]], anchors[valid])
    labels[pos & ~valid] = -1
    return AnchorTargets(labels, deltas, max_iou)


class ProposerNet(Module):
    def __init__(self, seed=0, in_channels=7):
        rng = np.random.default_rng(seed)
        self.backbone = Sequential(
            ("conv1", Conv2d(in_channels, 16, 3, rng, stride=2, padding=1)),
            ("relu1", ReLU()),
            ("conv2", Conv2d(16, 32, 3, rng, stride=2, padding=1)),
            ("relu2", ReLU()),
            ("conv3", Conv2d(32, BACKBONE_CHANNELS, 3, rng, stride=1, padding=1)),
            ("relu3", ReLU()),
        )
        self.n_anchors = len(ANCHOR_SCALES) * len(ANCHOR_RATIOS)
        self.objectness = Conv2d(BACKBONE_CHANNELS, self.n_anchors, 1, rng)
        self.regression = Conv2d(BACKBONE_CHANNELS, 4 * self.n_anchors, 1, rng)
        self.in_channels = in_channels

    def children(self):
        return [("backbone", self.backbone), ("objectness", self.objectness), ("regression", self.regression)]

    def heads(self, features):
        """Objectness logits [N x H*W*A] and deltas [N x H*W*A x 4] in anchor order."""
        n, _, h, w = features.shape
        a = self.n_anchors
        logits = self.objectness(features).transpose(0, 2, 3, 1).reshape(n, h * w * a)
        deltas = self.regression(features).reshape(n, a, 4, h, w).transpose(0, 3, 4, 1, 2).reshape(n, h * w * a, 4)
        return logits, deltas

    def forward(self, x):
        features = self.backbone(x)
        return (features,) + self.heads(features)

    def __call__(self, x):
        return self.forward(x)

    def arch(self):
        return {
            "net": "proposer",
            "in_channels": self.in_channels,
            "raster_size": RASTER_SIZE,
            "feature_stride": FEATURE_STRIDE,
            "anchor_scales": list(ANCHOR_SCALES),
            "anchor_ratios": list(ANCHOR_RATIOS),
            "roi_output": ROI_OUTPUT,
            "appearance_dim": APPEARANCE_DIM,
        }


@dataclass
class Proposal:
    box: Box
    objectness: float
    appearance: np.ndarray
    user_id: int | None = None


@dataclass
class ProposerConfig:
    epochs: int = 6
    batch_size: int = 16
    anchors_per_image: int = 64
    max_positive_fraction: float = 0.5
    box_loss_weight: float = 1.0
    adam: AdamConfig = field(default_factory=lambda: AdamConfig(lr=0.01))
    max_scenes: int | None = None
    eval_top_k: int = 20


@dataclass
class ProposerResult:
    net: ProposerNet
    loss_trace: list
    val_recall: list
    best_epoch: int


def sample_anchors(targets: AnchorTargets, rng, total=64, max_pos_fraction=0.5):
    """Up to total * max_pos_fraction positives; negatives fill the remainder."""
    pos = np.flatnonzero(targets.labels == 1)
    neg = np.flatnonzero(targets.labels == 0)
    n_pos = min(pos.size, int(total * max_pos_fraction))
    n_neg = min(neg.size, total - n_pos)
    pos = rng.choice(pos, size=n_pos, replace=False) if n_pos < pos.size else pos
    neg = rng.choice(neg, size=n_neg, replace=False) if n_neg < neg.size else neg
    return np.sort(pos), np.sort(neg)


def proposer_loss(net, batch, targets, rng, cfg: ProposerConfig):
    _, logits, deltas = net(Tensor(batch))
    n, n_anchors = logits.shape
    rows_cls, cols_cls, labels = [], [], []
    rows_reg, cols_reg, reg_targets = [], [], []
    for b in range(n):
        pos, neg = sample_anchors(targets[b], rng, cfg.anchors_per_image, cfg.max_positive_fraction)
        idx = np.concatenate([pos, neg])
        rows_cls.append(np.full(idx.size, b))
        cols_cls.append(idx)
        labels.append(np.concatenate([np.ones(pos.size), np.zeros(neg.size)]))
        rows_reg.append(np.full(pos.size, b))
        cols_reg.append(pos)
        reg_targets.append(targets[b].deltas[pos])
    rows_cls, cols_cls = np.concatenate(rows_cls), np.concatenate(cols_cls)
    cls_loss = F.bce_with_logits(logits[rows_cls, cols_cls], np.concatenate(labels))
    rows_reg, cols_reg = np.concatenate(rows_reg), np.concatenate(cols_reg)
    if rows_reg.size:
        reg_loss = F.smooth_l1_loss(
            deltas[rows_reg, cols_reg], np.concatenate(reg_targets), beta=1.0, normalizer=rows_reg.size
        )
        return cls_loss + reg_loss * cfg.box_loss_weight
    return cls_loss


def _gt_boxes(raster, scene):
    important = {u.id for u in scene.users if u.important}
    return np.array(
        [b.as_array() for b, uid in zip(raster.user_boxes, raster.user_ids) if uid in important]
    ).reshape(-1, 4)


def train_proposer(dataset, config: ProposerConfig = ProposerConfig(), seed=0, log=None) -> ProposerResult:
    """Train on the annotated training split; keep the epoch with the best validation recall."""
    train_ids = dataset.ids("train")
    if config.max_scenes is not None:
        train_ids = train_ids[: config.max_scenes]
    if not train_ids:
        raise UsageError("train_proposer needs at least one annotated training scene")
    val_ids = [i for i in dataset.ids("val") if dataset.scenes[i].n_important > 0]
    anchors = make_anchors()
    targets = {}
    for sid in train_ids:
        targets[sid] = assign_anchors(anchors, _gt_boxes(dataset.raster(sid), dataset.scenes[sid]))

    net = ProposerNet(seed)
    opt = Adam(net.named_parameters(), config.adam)
    rng = np.random.default_rng([seed, 101])
    trace, val_recall = [], []
    best = (-1.0, None, -1)
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_ids))
        for start in range(0, len(order), config.batch_size):
            ids = [train_ids[k] for k in order[start : start + config.batch_size]]
            opt.zero_grad()
            loss = proposer_loss(net, dataset.raster_batch(ids), [targets[i] for i in ids], rng, config)
            loss.backward()
            opt.step()
            trace.append(float(loss.data))
            if not np.isfinite(trace[-1]):
                raise FloatingPointError(f"proposer loss diverged at epoch {epoch}")
        recall = proposal_recall(net, dataset, val_ids or train_ids[:50], top_k=config.eval_top_k)
        val_recall.append(recall)
        if log:
            log(f"proposer epoch {epoch}: loss {np.mean(trace[-max(1, len(order) // config.batch_size):]):.4f} "
                f"val recall {recall:.3f}")
        if recall > best[0]:
            best = (recall, {k: np.array(v, copy=True) for k, v in net.state_dict().items()}, epoch)
    net.load_state_dict(best[1])
    return ProposerResult(net, trace, val_recall, best[2])


def backbone_features(net, batch, chunk=32):
    """Backbone feature maps [N x 32 x 24 x 24] in inference mode."""
    out = []
    with no_grad():
        for start in range(0, batch.shape[0], chunk):
            out.append(net.backbone(Tensor(batch[start : start + chunk])).data)
    return np.concatenate(out) if out else np.zeros((0, BACKBONE_CHANNELS, 24, 24))


def appearance_vector(feature_map, box: Box):
    pooled, _ = roi_pool_array(feature_map, box.scaled(1.0 / FEATURE_STRIDE), ROI_OUTPUT)
    return pooled.reshape(-1)


def propose(net, raster, nms_iou=0.7, conf_threshold=0.5, max_out=20):
    """Decode, clip, suppress and threshold proposals for one raster."""
    x = np.asarray(raster.channels, dtype=np.float64)[None]
    with no_grad():
        features, logits, deltas = net(Tensor(x))
    probs = 1.0 / (1.0 + np.exp(-logits.data[0]))
    boxes = decode_boxes(make_anchors(), deltas.data[0])
    keep = nms(boxes, probs, nms_iou, max_keep=max_out, min_score=conf_threshold)
    fmap = features.data[0]
    out = []
    for k in keep:
        box = Box(*boxes[k])
        out.append(Proposal(box, float(probs[k]), appearance_vector(fmap, box)))
    return out


def oracle_proposals(net, raster, feature_map=None):
    """One proposal per rasterised road user (objectness 1), in user-id order."""
    if feature_map is None:
        feature_map = backbone_features(net, np.asarray(raster.channels, dtype=np.float64)[None])[0]
    pairs = sorted(zip(raster.user_ids, raster.user_boxes), key=lambda p: p[0])
    return [Proposal(box, 1.0, appearance_vector(feature_map, box), uid) for uid, box in pairs]


def proposal_recall(net, dataset, scene_ids, top_k=20, conf_threshold=0.0, iou_match=0.5, nms_iou=0.7):
    """Fraction of important GT boxes covered (IoU >= iou_match) by some top-k proposal."""
    hit = total = 0
    for sid in scene_ids:
        raster = dataset.raster(sid)
        gt = _gt_boxes(raster, dataset.scenes[sid])
        if gt.shape[0] == 0:
            continue
        props = propose(net, raster, nms_iou, conf_threshold, top_k)
        total += gt.shape[0]
        if props:
            ious = iou_matrix(gt, np.array([p.box.as_array() for p in props]))
            hit += int(np.sum(ious.max(axis=1) >= iou_match))
    return hit / total if total else 0.0


def save_proposer(path, net, optimizer=None):
    save_checkpoint(path, net, net.arch(), optimizer)


def load_proposer(path):
    arch, records = load_checkpoint(path)
    if arch.get("net") != "proposer":
        raise UsageError(f"{path} is not a proposer checkpoint (net={arch.get('net')!r})")
    net = ProposerNet(0, arch["in_channels"])
    net.load_state_dict(records)
    return net
