"""Ego future-path regression; its flattened last conv activation is the scene context.

Targets are the 10 per-metre heading changes divided by ``ANGLE_SCALE`` so
the network regresses values of order one; :func:`predict_path` rescales.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from icare.errors import UsageError
from icare.numcore.functional import mse_loss
from icare.numcore.nn import BatchNorm, Conv2d, Dense, Dropout, Flatten, Module, ReLU, Sequential
from icare.numcore.optim import Adam, AdamConfig
from icare.numcore.serialize import load_checkpoint, save_checkpoint
from icare.numcore.tensor import Tensor, no_grad
from icare.scenegen.raster import RASTER_SIZE
from icare.scenegen.world import HORIZON_STEPS, MAX_STEER_DEG

ANGLE_SCALE = MAX_STEER_DEG


def normalize_angles(angles):
    return np.asarray(angles, dtype=np.float64) / ANGLE_SCALE


def denormalize_angles(values):
    return np.asarray(values, dtype=np.float64) * ANGLE_SCALE


class PathNet(Module):
    """5 conv layers (context) followed by 4 fully connected layers (path)."""

    def __init__(self, seed=0, in_channels=7, raster_size=RASTER_SIZE, keep_prob=0.6):
        rng = np.random.default_rng(seed)
        self.in_channels, self.raster_size = in_channels, raster_size
        self.conv = Sequential(
            ("conv1", Conv2d(in_channels, 12, 5, rng, stride=2, padding=2)), ("bn1", BatchNorm(12)), ("relu1", ReLU()),
            ("conv2", Conv2d(12, 16, 5, rng, stride=2, padding=2)), ("bn2", BatchNorm(16)), ("relu2", ReLU()),
            ("conv3", Conv2d(16, 24, 3, rng, stride=2, padding=1)), ("bn3", BatchNorm(24)), ("relu3", ReLU()),
            ("conv4", Conv2d(24, 32, 3, rng, stride=2, padding=1)), ("bn4", BatchNorm(32)), ("relu4", ReLU()),
            ("conv5", Conv2d(32, 8, 3, rng, stride=1, padding=1)), ("relu5", ReLU()),
            ("flatten", Flatten()),
        )
        side = raster_size
        for _ in range(4):
            side = (side + 1) // 2
        self.context_dim = 8 * side * side
        self.head = Sequential(
            ("fc1", Dense(self.context_dim, 128, rng)), ("bn_fc1", BatchNorm(128)), ("relu_fc1", ReLU()),
            ("drop1", Dropout(keep_prob)),
            ("fc2", Dense(128, 64, rng)), ("bn_fc2", BatchNorm(64)), ("relu_fc2", ReLU()),
            ("drop2", Dropout(keep_prob)),
            ("fc3", Dense(64, 32, rng)), ("relu_fc3", ReLU()),
            ("fc4", Dense(32, HORIZON_STEPS, rng)),
        )

    def children(self):
        return [("conv", self.conv), ("head", self.head)]

    def forward_with_context(self, x):
        context = self.conv(x)
        return self.head(context), context

    def forward(self, x):
        return self.forward_with_context(x)[0]

    def arch(self):
        return {
            "net": "pathnet",
            "in_channels": self.in_channels,
            "raster_size": self.raster_size,
            "context_dim": self.context_dim,
            "angle_scale": ANGLE_SCALE,
            "conv_layers": 5,
            "fc_layers": 4,
        }


@dataclass
class PathNetConfig:
    epochs: int = 12
    batch_size: int = 32
    adam: AdamConfig = field(default_factory=AdamConfig)
    max_scenes: int | None = None


@dataclass
class PathNetResult:
    net: PathNet
    train_mse: list
    val_mse: list
    best_epoch: int

    @property
    def best_so_far(self):
        return list(np.minimum.accumulate(self.val_mse))


def _targets(dataset, ids):
    return np.stack([normalize_angles(dataset.scenes[i].gt_path) for i in ids])


def _infer(net, dataset, ids, chunk=64):
    """Normalised path predictions and contexts in inference mode."""
    if net.training:
        raise UsageError("pathnet inference requires eval mode")
    preds, contexts = [], []
    with no_grad():
        for start in range(0, len(ids), chunk):
            batch = dataset.raster_batch(ids[start : start + chunk])
            p, c = net.forward_with_context(Tensor(batch))
            preds.append(p.data)
            contexts.append(c.data)
    if not preds:
        return np.zeros((0, HORIZON_STEPS)), np.zeros((0, net.context_dim))
    return np.concatenate(preds), np.concatenate(contexts)


def evaluate_mse(net, dataset, ids):
    """MSE on normalised angles."""
    net.eval()
    preds, _ = _infer(net, dataset, ids)
    return float(np.mean((preds - _targets(dataset, ids)) ** 2))


def train_pathnet(dataset, config: PathNetConfig = PathNetConfig(), seed=0, log=None) -> PathNetResult:
    train_ids = dataset.ids("train")
    if config.max_scenes is not None:
        train_ids = train_ids[: config.max_scenes]
    if not train_ids:
        raise UsageError("train_pathnet needs a non-empty training split")
    val_ids = dataset.ids("val") or train_ids[: max(1, len(train_ids) // 10)]
    targets = dict(zip(train_ids, _targets(dataset, train_ids)))

    net = PathNet(seed)
    net.set_rng(np.random.default_rng([seed, 202]))
    opt = Adam(net.named_parameters(), config.adam)
    order_rng = np.random.default_rng([seed, 203])
    train_trace, val_trace = [], []
    best = (np.inf, None, -1)
    for epoch in range(config.epochs):
        net.train()
        order = order_rng.permutation(len(train_ids))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            if idx.size < 2:  # batch norm needs two samples
                continue
            ids = [train_ids[k] for k in idx]
            opt.zero_grad()
            loss = mse_loss(net(Tensor(dataset.raster_batch(ids))), np.stack([targets[i] for i in ids]))
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        train_trace.append(float(np.mean(losses)))
        val = evaluate_mse(net, dataset, val_ids)
        val_trace.append(val)
        if log:
            log(f"pathnet epoch {epoch}: train mse {train_trace[-1]:.4f} val mse {val:.4f}")
        if val < best[0]:
            best = (val, {k: np.array(v, copy=True) for k, v in net.state_dict().items()}, epoch)
    net.load_state_dict(best[1])
    net.eval()
    return PathNetResult(net, train_trace, val_trace, best[2])


def predict_path(net, raster):
    """10 heading changes in degrees for one raster (inference mode)."""
    net.eval()
    x = np.asarray(getattr(raster, "channels", raster), dtype=np.float64)[None]
    with no_grad():
        out = net(Tensor(x)).data[0]
    return denormalize_angles(out)


def extract_context(net, raster):
    """Flattened last conv activation (frozen feature, no graph recorded)."""
    net.eval()
    x = np.asarray(getattr(raster, "channels", raster), dtype=np.float64)[None]
    with no_grad():
        return net.conv(Tensor(x)).data[0]


def predict_dataset(net, dataset, ids):
    """(paths in degrees [N x 10], contexts [N x context_dim]) from one shared forward pass."""
    net.eval()
    preds, contexts = _infer(net, dataset, ids)
    return denormalize_angles(preds), contexts


def path_error_by_step(net, dataset, ids):
    """Per-step mean absolute error in degrees."""
    preds, _ = predict_dataset(net, dataset, ids)
    gt = np.stack([dataset.scenes[i].gt_path for i in ids])
    return np.mean(np.abs(preds - gt), axis=0)


def constant_path_mse(dataset, train_ids, test_ids):
    """Denormalised MSE (deg^2) of always predicting the training mean path."""
    mean = np.mean([dataset.scenes[i].gt_path for i in train_ids], axis=0)
    gt = np.stack([dataset.scenes[i].gt_path for i in test_ids])
    return float(np.mean((gt - mean) ** 2))


def save_pathnet(path, net, optimizer=None):
    save_checkpoint(path, net, net.arch(), optimizer)


def load_pathnet(path):
    arch, records = load_checkpoint(path)
    if arch.get("net") != "pathnet":
        raise UsageError(f"{path} is not a pathnet checkpoint (net={arch.get('net')!r})")
    net = PathNet(0, arch["in_channels"], arch["raster_size"])
    if net.context_dim != arch["context_dim"]:
        raise UsageError(f"{path}: context dimension {arch['context_dim']} does not match {net.context_dim}")
    net.load_state_dict(records)
    net.eval()
    return net
