"""Plain-text ``key = value`` run configuration; every field is explicit and round-trips."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from icare.errors import ConfigurationError
from icare.fusion import MODE_FIELDS, FusionConfig
from icare.numcore.nn import LossConfig
from icare.numcore.optim import AdamConfig
from icare.pathnet import PathNetConfig
from icare.proposer import ProposerConfig
from icare.scenegen.generate import SceneConfig
from icare.scenegen.oracle import OracleConfig


@dataclass
class RunConfig:
    seed: int = 7
    n_scenes: int = 4000
    data_dir: str = "data"
    out_dir: str = "runs/reference"
    # oracle
    r_safe: float = 4.0
    corridor_halfwidth: float = 1.5
    boundary_band: float = 1.0
    flip_prob: float = 0.05
    r_safe_alt: float = 3.0
    corridor_halfwidth_alt: float = 1.0
    # shared Adam moments
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8
    # per-stage schedules
    path_lr: float = 0.001
    path_epochs: int = 16
    path_batch: int = 32
    path_seed: int = 0
    proposer_lr: float = 0.01
    proposer_epochs: int = 6
    proposer_batch: int = 16
    proposer_seed: int = 0
    fusion_lr: float = 0.001
    fusion_epochs: int = 20
    fusion_batch: int = 64
    weight_important: float = 2.0
    weight_not_important: float = 1.0
    # proposals
    nms_iou: float = 0.7
    conf_threshold: float = 0.5
    max_proposals: int = 20
    recall_top_k: int = 20
    proposal_source: str = "oracle"
    # ablation
    modes: tuple = ("A", "B", "C", "D")
    seeds: tuple = (0, 1, 2)

    def __post_init__(self):
        if self.n_scenes <= 0:
            raise ConfigurationError("n_scenes must be positive")
        for name in ("path_lr", "proposer_lr", "fusion_lr", "epsilon"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("path_epochs", "proposer_epochs", "fusion_epochs", "path_batch", "proposer_batch",
                     "fusion_batch", "max_proposals", "recall_top_k"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.proposal_source not in ("oracle", "proposer"):
            raise ConfigurationError(f"proposal_source must be 'oracle' or 'proposer', got {self.proposal_source!r}")
        bad = [m for m in self.modes if m not in MODE_FIELDS]
        if bad or not self.modes:
            raise ConfigurationError(f"unknown ablation modes {bad}")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")

    # -- derived stage configs -------------------------------------------------

    def adam(self, lr):
        return AdamConfig(lr=lr, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon)

    def oracle(self):
        return OracleConfig(r_safe=self.r_safe, corridor_halfwidth=self.corridor_halfwidth,
                            boundary_band=self.boundary_band, flip_prob=self.flip_prob,
                            r_safe_alt=self.r_safe_alt, corridor_halfwidth_alt=self.corridor_halfwidth_alt)

    def scene_config(self):
        return SceneConfig(oracle=self.oracle())

    def pathnet_config(self):
        return PathNetConfig(epochs=self.path_epochs, batch_size=self.path_batch, adam=self.adam(self.path_lr))

    def proposer_config(self):
        return ProposerConfig(epochs=self.proposer_epochs, batch_size=self.proposer_batch,
                              adam=self.adam(self.proposer_lr), eval_top_k=self.recall_top_k)

    def fusion_config(self):
        return FusionConfig(epochs=self.fusion_epochs, batch_size=self.fusion_batch, adam=self.adam(self.fusion_lr),
                            loss=LossConfig(self.weight_not_important, self.weight_important))

    # -- text form ---------------------------------------------------------------

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **overrides):
        return dataclasses.replace(self, **overrides)


def _coerce(f, raw):
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            return tuple(int(s) for s in items) if default and isinstance(default[0], int) else tuple(items)
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {f.name}: {raw!r}") from exc
    return raw


def parse_config(text, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines ('#' starts a comment) on top of ``base``."""
    known = {f.name: f for f in fields(RunConfig)}
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigurationError(f"line {n}: unknown key {key!r}")
        values[key] = _coerce(known[key], raw)
    return dataclasses.replace(base or RunConfig(), **values)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), base)


def save_config(path, cfg: RunConfig):
    with open(path, "w") as fh:
        fh.write(cfg.to_text())
