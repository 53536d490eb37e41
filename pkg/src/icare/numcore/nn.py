"""Layer modules: parameter ownership, train/eval mode, named state."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from icare.numcore import functional as F
from icare.numcore.tensor import Tensor, check_finite, get_default_dtype


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    training = True

    def __call__(self, x):
        out = self.forward(x)
        check_finite(out, type(self).__name__)
        return out

    def forward(self, x):  # pragma: no cover - abstract
        raise NotImplementedError

    def children(self):
        return []

    def named_parameters(self, prefix=""):
        params = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                params[prefix + name] = value
        for name, child in self.children():
            params.update(child.named_parameters(f"{prefix}{name}."))
        return params

    def named_buffers(self, prefix=""):
        buffers = {}
        for name in getattr(self, "_buffer_names", ()):
            buffers[prefix + name] = getattr(self, name)
        for name, child in self.children():
            buffers.update(child.named_buffers(f"{prefix}{name}."))
        return buffers

    def parameters(self):
        return list(self.named_parameters().values())

    def train(self, mode=True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def set_rng(self, rng):
        """Hand a random stream to every dropout layer below this module."""
        for _, child in self.children():
            child.set_rng(rng)

    def state_dict(self):
        state = {k: v.data for k, v in self.named_parameters().items()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state):
        from icare.errors import FormatError

        params = self.named_parameters()
        buffers = self.named_buffers()
        expected = set(params) | set(buffers)
        missing = expected - set(state)
        if missing:
            raise FormatError(f"state is missing entries: {sorted(missing)}")
        for name, tensor in params.items():
            value = np.asarray(state[name])
            if value.shape != tensor.shape:
                raise FormatError(f"shape mismatch for {name}: checkpoint {value.shape} vs model {tensor.shape}")
            tensor.data = value.astype(get_default_dtype()).copy()
        for name, buf in buffers.items():
            value = np.asarray(state[name])
            if value.shape != buf.shape:
                raise FormatError(f"shape mismatch for {name}: checkpoint {value.shape} vs model {buf.shape}")
            buf[...] = value


class Dense(Module):
    def __init__(self, in_features, out_features, rng):
        self.in_features, self.out_features = in_features, out_features
        w = glorot_uniform(rng, (out_features, in_features), in_features, out_features)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def forward(self, x):
        return F.dense(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, padding=0):
        self.stride, self.padding = stride, padding
        fan_in, fan_out = in_ch * kernel * kernel, out_ch * kernel * kernel
        self.weight = Tensor(glorot_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, fan_out), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    """Batch normalization over axis 1 for [N x C] and [N x C x H x W] inputs."""

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.9, eps=1e-5):
        self.momentum, self.eps = momentum, eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=get_default_dtype())
        self.running_var = np.ones(channels, dtype=get_default_dtype())

    def forward(self, x):
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.training, self.momentum, self.eps
        )


class Dropout(Module):
    def __init__(self, keep_prob=0.6):
        self.keep_prob = keep_prob
        self.rng = None

    def set_rng(self, rng):
        self.rng = rng

    def forward(self, x):
        return F.dropout(x, self.keep_prob, self.training, self.rng)


class ReLU(Module):
    def forward(self, x):
        return x.relu()


class Sigmoid(Module):
    def forward(self, x):
        return x.sigmoid()


class Flatten(Module):
    def forward(self, x):
        return x.flatten()


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = []
        for i, item in enumerate(layers):
            name, layer = item if isinstance(item, tuple) else (str(i), item)
            self.layers.append((name, layer))

    def children(self):
        return self.layers

    def forward(self, x):
        for _, layer in self.layers:
            x = layer(x)
        return x

    def __getitem__(self, name):
        return dict(self.layers)[name]


@dataclass(frozen=True)
class LossConfig:
    weight_not_important: float = 1.0
    weight_important: float = 2.0

    def __post_init__(self):
        if self.weight_not_important <= 0 or self.weight_important <= 0:
            raise ValueError("class weights must be positive")
