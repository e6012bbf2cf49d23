from __future__ import annotations

from dataclasses import dataclass, field

import torch


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


@torch.no_grad()
def adam_step(params, grads, state: AdamState) -> None:
    """In-place bias-corrected Adam update of ``params``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch: param {tuple(p.shape)} vs grad {tuple(g.shape)}")
        m.mul_(state.beta1).add_(g, alpha=1 - state.beta1)
        v.mul_(state.beta2).addcmul_(g, g, value=1 - state.beta2)
        p.sub_(state.lr * (m / c1) / ((v / c2).sqrt() + state.eps))


class Adam:
    """Optimizer over a fixed parameter list."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state)
