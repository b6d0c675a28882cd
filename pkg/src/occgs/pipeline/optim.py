"""Adam, written out so moment bookkeeping survives densification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass
class Moments:
    m: object
    v: object
    step: int = 0

    @classmethod
    def zeros_like(cls, p) -> "Moments":
        if isinstance(p, torch.Tensor):
            return cls(torch.zeros_like(p), torch.zeros_like(p))
        return cls(np.zeros_like(p), np.zeros_like(p))


def adam_step(param, grad, moments: Moments, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update -> (new param, new moments). Inputs are not modified."""
    if tuple(param.shape) != tuple(grad.shape) or tuple(param.shape) != tuple(moments.m.shape):
        raise ValueError("parameter, gradient and moments must share a shape")
    sqrt = torch.sqrt if isinstance(param, torch.Tensor) else np.sqrt
    step = moments.step + 1
    m = beta1 * moments.m + (1 - beta1) * grad
    v = beta2 * moments.v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**step)
    v_hat = v / (1 - beta2**step)
    return param - lr * m_hat / (sqrt(v_hat) + eps), Moments(m, v, step)


class Adam:
    """Adam over named torch leaves, each group with its own learning rate."""

    def __init__(self, params: dict, lrs: dict):
        self.params = params
        self.lrs = lrs
        self.state = {k: Moments.zeros_like(p.detach()) for k, p in params.items()}

    @torch.no_grad()
    def step(self) -> None:
        for k, p in self.params.items():
            if p.grad is None:
                continue
            new, self.state[k] = adam_step(p.detach(), p.grad, self.state[k], self.lrs[k])
            p.copy_(new)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def remap(self, key: str, new_param, source, fresh) -> None:
        """Re-index one group's moments after rows were added or removed."""
        st = self.state[key]
        idx = torch.as_tensor(source, dtype=torch.long)
        keep = torch.as_tensor(~np.asarray(fresh, dtype=bool))
        shape = (-1,) + (1,) * (st.m.ndim - 1)
        m = st.m[idx] * keep.reshape(shape)
        v = st.v[idx] * keep.reshape(shape)
        self.params[key] = new_param
        self.state[key] = Moments(m, v, st.step)
