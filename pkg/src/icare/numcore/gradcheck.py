"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from icare.numcore.tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_parameter: str
    worst_index: tuple
    checked: int

    def passed(self, tolerance):
        return self.max_rel_error <= tolerance


def relative_error(analytic, numeric, floor=1e-7):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(loss_fn, params, step=1e-5, max_entries=None, rng=None, floor=1e-7):
    """Compare analytic and central-difference gradients of ``loss_fn()``.

    ``loss_fn`` rebuilds the graph and returns a scalar :class:`Tensor`; it
    must be deterministic (dropout off, fixed batch). ``params`` maps names
    to leaf tensors. With ``max_entries`` set, that many entries per tensor
    are sampled (all of them when the tensor is smaller).
    """
    params = dict(params)
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}

    rng = rng if rng is not None else np.random.default_rng(0)
    worst = (0.0, "", ())
    checked = 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for i in indices:
            original = flat[i]
            flat[i] = original + step
            up = float(loss_fn().data)
            flat[i] = original - step
            down = float(loss_fn().data)
            flat[i] = original
            numeric = (up - down) / (2.0 * step)
            err = relative_error(float(analytic[name].reshape(-1)[i]), numeric, floor)
            checked += 1
            if err > worst[0]:
                worst = (err, name, np.unravel_index(i, p.shape))
    return GradCheckReport(worst[0], worst[1], tuple(int(j) for j in worst[2]), checked)


def projected_loss(output: Tensor, rng_seed=1234):
    """Scalar loss sum(output * R) with a fixed random R; exercises every output entry."""
    proj = np.random.default_rng(rng_seed).standard_normal(output.shape)
    return (output * proj).sum()


def check_module(module, x, max_entries=40, step=1e-5, seed=0):
    """Grad-check every parameter tensor of ``module`` on input ``x``.

    Dropout layers must be inactive; call ``module.eval()`` first unless a
    fixed training batch is intended.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)

    def loss_fn():
        return projected_loss(module(x))

    return grad_check(loss_fn, module.named_parameters(), step=step, max_entries=max_entries,
                      rng=np.random.default_rng(seed))
