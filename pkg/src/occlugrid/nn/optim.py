"""Adam with bias correction."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import torch


@dataclass
class AdamState:
    step: int = 0
    m: OrderedDict = field(default_factory=OrderedDict)
    v: OrderedDict = field(default_factory=OrderedDict)

    @classmethod
    def zeros_like(cls, params):
        return cls(0, OrderedDict((k, torch.zeros_like(t.detach())) for k, t in params.items()),
                   OrderedDict((k, torch.zeros_like(t.detach())) for k, t in params.items()))


def adam_step(params, grads, state: AdamState, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """Update ``params`` in place and return the advanced state."""
    state.step += 1
    bc1 = 1 - beta1**state.step
    bc2 = 1 - beta2**state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            m, v = state.m[name], state.v[name]
            m.mul_(beta1).add_(g, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            p.sub_(lr * (m / bc1) / (torch.sqrt(v / bc2) + eps))
    return state
