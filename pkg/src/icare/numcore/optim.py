"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from icare.errors import UsageError


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1): {self.beta1}, {self.beta2}")


class Adam:
    """Adam over a named parameter dict.

    State (``m``, ``v``, ``t``) is exposed so checkpoints can persist it.
    """

    def __init__(self, params, config: AdamConfig = AdamConfig()):
        self.params = dict(params)
        self.config = config
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = 0

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        cfg = self.config
        for name, p in self.params.items():
            if p.grad is None:
                raise UsageError(f"parameter {name!r} has no gradient; run backward() first")
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            p.data -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)

    def state_records(self):
        records = {}
        for name in self.params:
            records[f"adam.m/{name}"] = self.m[name]
            records[f"adam.v/{name}"] = self.v[name]
        records["adam.t"] = np.asarray(self.t, dtype=np.int64)
        return records

    def load_state_records(self, records):
        for name in self.params:
            self.m[name][...] = records[f"adam.m/{name}"]
            self.v[name][...] = records[f"adam.v/{name}"]
        self.t = int(records["adam.t"])
