"""Stage-2 importance classifier over concatenated per-proposal features."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from icare.errors import UsageError
from icare.geometry import iou_matrix, location_feature
from icare.numcore.functional import weighted_bce_loss
from icare.numcore.nn import BatchNorm, Dense, Dropout, LossConfig, Module, ReLU, Sequential, Sigmoid
from icare.numcore.optim import Adam, AdamConfig
from icare.numcore.serialize import load_checkpoint, save_checkpoint
from icare.numcore.tensor import Tensor, no_grad
from icare.pathnet import normalize_angles
from icare.proposer import APPEARANCE_DIM, backbone_features, oracle_proposals, propose
from icare.scenegen.dataset import hash_unit
from icare.scenegen.raster import RASTER_SIZE

FIELD_ORDER = ("appearance", "location", "context", "gt_path_input")
MODE_FIELDS = {
    "A": ("appearance",),
    "B": ("appearance", "location", "gt_path_input"),
    "C": ("appearance", "location", "context"),
    "D": ("location", "gt_path_input"),
}
MODE_NAMES = {
    "A": "appearance",
    "B": "appearance + location + path",
    "C": "appearance + location + context",
    "D": "location + path",
}
LOCATION_DIM = 4
PATH_DIM = 10
PROPOSAL_SOURCES = ("oracle", "proposer")


def check_mode(mode):
    if mode not in MODE_FIELDS:
        raise UsageError(f"unknown ablation mode {mode!r}; expected one of {', '.join(MODE_FIELDS)}")
    return mode


def field_dims(context_dim=288, appearance_dim=APPEARANCE_DIM):
    return {"appearance": appearance_dim, "location": LOCATION_DIM, "context": context_dim, "gt_path_input": PATH_DIM}


def input_dim(mode, context_dim=288, appearance_dim=APPEARANCE_DIM):
    dims = field_dims(context_dim, appearance_dim)
    return sum(dims[f] for f in MODE_FIELDS[check_mode(mode)])


@dataclass
class FeatureBundle:
    scene_id: int
    box: tuple
    score: float
    label: int
    label_alt: int
    user_id: int | None = None
    appearance: np.ndarray | None = None
    location: np.ndarray | None = None
    context: np.ndarray | None = None
    gt_path_input: np.ndarray | None = None

    def restrict(self, mode):
        """Copy carrying only the fields ``mode`` consumes."""
        keep = MODE_FIELDS[check_mode(mode)]
        return replace(self, **{f: None for f in FIELD_ORDER if f not in keep})


def build_feature_vector(mode, bundle: FeatureBundle):
    parts = []
    for name in MODE_FIELDS[check_mode(mode)]:
        value = getattr(bundle, name)
        if value is None:
            raise UsageError(f"mode {mode} needs feature {name!r}, which the bundle does not carry")
        parts.append(np.asarray(value, dtype=np.float64).reshape(-1))
    return np.concatenate(parts)


def feature_matrix(mode, bundles):
    if not bundles:
        raise UsageError("no samples")
    return np.stack([build_feature_vector(mode, b) for b in bundles])


class FusionNet(Module):
    def __init__(self, in_dim, seed=0, keep_prob=0.6):
        rng = np.random.default_rng(seed)
        self.in_dim = int(in_dim)
        self.body = Sequential(
            ("fc1", Dense(self.in_dim, 128, rng)), ("bn1", BatchNorm(128)), ("relu1", ReLU()),
            ("drop1", Dropout(keep_prob)),
            ("fc2", Dense(128, 128, rng)), ("bn2", BatchNorm(128)), ("relu2", ReLU()),
            ("drop2", Dropout(keep_prob)),
            ("fc3", Dense(128, 64, rng)), ("bn3", BatchNorm(64)), ("relu3", ReLU()),
            ("fc4", Dense(64, 1, rng)), ("sigmoid", Sigmoid()),
        )

    def children(self):
        return [("body", self.body)]

    def forward(self, x):
        if x.shape[-1] != self.in_dim:
            raise UsageError(f"fusion input has {x.shape[-1]} features, the net expects {self.in_dim}")
        return self.body(x)


def score_importance(net: FusionNet, vector):
    vector = np.asarray(vector, dtype=np.float64)
    if vector.ndim != 1 or vector.shape[0] != net.in_dim:
        raise UsageError(f"feature vector of shape {vector.shape} does not match input dimension {net.in_dim}")
    return float(score_batch(net, vector[None])[0])


def score_batch(net: FusionNet, matrix, chunk=1024):
    net.eval()
    out = []
    with no_grad():
        for start in range(0, matrix.shape[0], chunk):
            out.append(net(Tensor(np.asarray(matrix[start : start + chunk], dtype=np.float64))).data[:, 0])
    return np.concatenate(out) if out else np.zeros(0)


# -- sample construction ---------------------------------------------------------


def _label_boxes(raster, scene, attr):
    boxes = [b.as_array() for b, uid in zip(raster.user_boxes, raster.user_ids) if getattr(scene.users[uid], attr)]
    return np.array(boxes, dtype=np.float64).reshape(-1, 4)


def _iou_labels(boxes, gt, iou_match=0.5):
    if gt.shape[0] == 0 or boxes.shape[0] == 0:
        return np.zeros(boxes.shape[0], dtype=np.int64)
    return (iou_matrix(boxes, gt).max(axis=1) >= iou_match).astype(np.int64)


def make_training_samples(dataset, scene_ids, proposer_net, proposal_source="oracle", mode=None, pathnet=None,
                          conf_threshold=0.0, max_proposals=20, nms_iou=0.7, chunk=64):
    """One bundle per proposal, labelled 1 iff IoU >= 0.5 with an important GT box.

    ``mode=None`` keeps every feature the inputs allow; otherwise bundles are
    restricted to the fields ``mode`` consumes.  Context is computed once per
    scene and shared by all of that scene's bundles.
    """
    if proposal_source not in PROPOSAL_SOURCES:
        raise UsageError(f"proposal_source must be one of {PROPOSAL_SOURCES}, got {proposal_source!r}")
    if mode is not None and "context" in MODE_FIELDS[check_mode(mode)] and pathnet is None:
        raise UsageError(f"mode {mode} needs a trained pathnet for the context feature")
    from icare.pathnet import predict_dataset

    proposer_net.eval()
    scene_ids = list(scene_ids)
    bundles = []
    for start in range(0, len(scene_ids), chunk):
        ids = scene_ids[start : start + chunk]
        batch = dataset.raster_batch(ids)
        fmaps = backbone_features(proposer_net, batch) if proposal_source == "oracle" else None
        contexts = predict_dataset(pathnet, dataset, ids)[1] if pathnet is not None else [None] * len(ids)
        for k, sid in enumerate(ids):
            scene, raster = dataset.scenes[sid], dataset.raster(sid)
            if proposal_source == "oracle":
                props = oracle_proposals(proposer_net, raster, fmaps[k])
            else:
                props = propose(proposer_net, raster, nms_iou, conf_threshold, max_proposals)
            if not props:
                continue
            boxes = np.array([p.box.as_array() for p in props])
            if proposal_source == "oracle":
                labels = [int(scene.users[p.user_id].important) for p in props]
                labels_alt = [int(scene.users[p.user_id].important_alt) for p in props]
            else:
                labels = _iou_labels(boxes, _label_boxes(raster, scene, "important"))
                labels_alt = _iou_labels(boxes, _label_boxes(raster, scene, "important_alt"))
            path = normalize_angles(scene.gt_path)
            for p, y, y_alt in zip(props, labels, labels_alt):
                b = FeatureBundle(
                    scene_id=sid,
                    box=tuple(float(v) for v in p.box.as_array()),
                    score=p.objectness,
                    label=int(y),
                    label_alt=int(y_alt),
                    user_id=p.user_id,
                    appearance=p.appearance,
                    location=location_feature(p.box, RASTER_SIZE, RASTER_SIZE).as_array(),
                    context=contexts[k],
                    gt_path_input=path,
                )
                bundles.append(b if mode is None else b.restrict(mode))
    return bundles


# -- training -------------------------------------------------------------------


@dataclass
class FusionConfig:
    epochs: int = 20
    batch_size: int = 64
    adam: AdamConfig = field(default_factory=AdamConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    val_fraction: float = 0.15


@dataclass
class FusionResult:
    net: FusionNet
    mode: str
    context_dim: int
    loss_trace: list
    val_f1: list
    best_epoch: int


def _holdout(samples, fraction):
    """Deterministic scene-level split so one scene never feeds both sides."""
    val = [s for s in samples if hash_unit(s.scene_id, "fusion-val") < fraction]
    train = [s for s in samples if hash_unit(s.scene_id, "fusion-val") >= fraction]
    return train, val


def _context_dim(samples, mode):
    if "context" not in MODE_FIELDS[mode]:
        return 0
    ctx = samples[0].context
    if ctx is None:
        raise UsageError(f"mode {mode} needs feature 'context', which the bundle does not carry")
    return int(np.asarray(ctx).size)


def train_fusion(samples, mode, config: FusionConfig = FusionConfig(), seed=0, val_samples=None, log=None,
                 label_attr="label") -> FusionResult:
    from icare.evaluation import classification_f1_max

    check_mode(mode)
    if not samples:
        raise UsageError("train_fusion needs samples")
    if val_samples is None:
        samples, val_samples = _holdout(samples, config.val_fraction)
    x = feature_matrix(mode, samples)
    y = np.array([getattr(s, label_attr) for s in samples], dtype=np.float64)
    if y.min() == y.max():
        raise UsageError("train_fusion needs both important and not-important samples")
    xv = feature_matrix(mode, val_samples) if val_samples else x
    yv = np.array([getattr(s, label_attr) for s in val_samples]) if val_samples else y

    net = FusionNet(x.shape[1], seed)
    net.set_rng(np.random.default_rng([seed, 302]))
    opt = Adam(net.named_parameters(), config.adam)
    order_rng = np.random.default_rng([seed, 303])
    trace, val_trace = [], []
    best = (-1.0, None, -1)
    for epoch in range(config.epochs):
        net.train()
        order = order_rng.permutation(len(y))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            if idx.size < 2:
                continue
            opt.zero_grad()
            p = net(Tensor(x[idx]))
            loss = weighted_bce_loss(p, y[idx], config.loss.weight_important, config.loss.weight_not_important)
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        trace.append(float(np.mean(losses)))
        f1 = classification_f1_max(score_batch(net, xv), yv)
        val_trace.append(f1)
        if log:
            log(f"fusion {mode} epoch {epoch}: loss {trace[-1]:.4f} val f1 {f1:.4f}")
        if f1 > best[0]:
            best = (f1, {k: np.array(v, copy=True) for k, v in net.state_dict().items()}, epoch)
    net.load_state_dict(best[1])
    net.eval()
    return FusionResult(net, mode, _context_dim(samples, mode), trace, val_trace, best[2])


# -- persistence ------------------------------------------------------------------


def fusion_arch(result_or_net, mode, context_dim):
    net = getattr(result_or_net, "net", result_or_net)
    return {
        "net": "fusion",
        "mode": mode,
        "input_dim": net.in_dim,
        "context_dim": int(context_dim),
        "appearance_dim": APPEARANCE_DIM,
        "field_order": list(MODE_FIELDS[mode]),
    }


def save_fusion(path, result: FusionResult, optimizer=None):
    save_checkpoint(path, result.net, fusion_arch(result, result.mode, result.context_dim), optimizer)


def load_fusion(path, context_dim=None):
    """Returns (net, mode); fails if ``context_dim`` disagrees with the checkpoint."""
    arch, records = load_checkpoint(path)
    if arch.get("net") != "fusion":
        raise UsageError(f"{path} is not a fusion checkpoint (net={arch.get('net')!r})")
    mode = check_mode(arch["mode"])
    if context_dim is not None and "context" in MODE_FIELDS[mode] and int(context_dim) != arch["context_dim"]:
        raise UsageError(f"{path} expects a {arch['context_dim']}-dim context, got {context_dim}")
    net = FusionNet(arch["input_dim"])
    net.load_state_dict(records)
    net.eval()
    return net, mode
