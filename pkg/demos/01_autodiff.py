"""Reverse-mode autodiff in numcore, checked against finite differences.

Builds a tiny conv + dense net, takes one Adam step on a weighted BCE loss,
and shows that the analytic gradients agree with central differences.

    python demos/01_autodiff.py
"""
import numpy as np

from icare.numcore import (
    Adam, AdamConfig, BatchNorm, Conv2d, Dense, Flatten, ReLU, Sequential, Sigmoid, Tensor, grad_check,
    weighted_bce_loss,
)

rng = np.random.default_rng(0)
net = Sequential(
    Conv2d(2, 4, 3, rng, stride=2, padding=1), BatchNorm(4), ReLU(), Flatten(),
    Dense(4 * 4 * 4, 1, rng), Sigmoid(),
)
x = Tensor(rng.standard_normal((6, 2, 8, 8)))
y = np.array([1, 0, 0, 1, 0, 0], dtype=float)


def loss_fn():
    # important users weigh twice as much as the rest
    return weighted_bce_loss(net(x), y, 2.0, 1.0)


net.eval()  # batch norm on running stats so the loss is a fixed function of the weights
report = grad_check(loss_fn, net.named_parameters())
print(f"gradient check: max relative error {report.max_rel_error:.2e} over {report.checked} entries")

net.train()
opt = Adam(net.named_parameters(), AdamConfig(lr=0.01))
for step in range(5):
    opt.zero_grad()
    loss = loss_fn()
    loss.backward()
    opt.step()
    print(f"step {step}: loss {float(loss.data):.4f}")
