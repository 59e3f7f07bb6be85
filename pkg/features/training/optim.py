"""AdamW with decoupled weight decay and per-group learning-rate factors."""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping

import numpy as np

from core.tensor import Tensor
from core.utils.config import TrackerConfig


@dataclass
class OptimState:
    groups: Dict[str, List[Tensor]]
    lr_factors: Dict[str, float]
    first: Dict[str, List[np.ndarray]] = field(default_factory=dict)
    second: Dict[str, List[np.ndarray]] = field(default_factory=dict)
    step: int = 0


class AdamW:
    def __init__(
        self,
        groups: Mapping[str, List[Tensor]],
        lr_factors: Mapping[str, float],
        weight_decay: float = 1e-4,
        betas=(0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.state = OptimState(
            groups=dict(groups),
            lr_factors={name: float(lr_factors.get(name, 1.0)) for name in groups},
            first={name: [np.zeros_like(p.data) for p in params] for name, params in groups.items()},
            second={name: [np.zeros_like(p.data) for p in params] for name, params in groups.items()},
        )
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps

    @classmethod
    def from_config(cls, groups: Mapping[str, List[Tensor]], cfg: TrackerConfig) -> "AdamW":
        factors = {"backbone": cfg.backbone_lr_factor, "module": 1.0, "head": cfg.head_lr_factor}
        return cls(groups, factors, cfg.weight_decay)

    def applied_lrs(self, lr: float) -> Dict[str, float]:
        return {name: lr * factor for name, factor in self.state.lr_factors.items()}

    def step(self, lr: float) -> None:
        state = self.state
        state.step += 1
        correction1 = 1.0 - self.beta1**state.step
        correction2 = 1.0 - self.beta2**state.step
        for name, group_lr in self.applied_lrs(lr).items():
            for p, m, v in zip(state.groups[name], state.first[name], state.second[name]):
                if p.grad is None:
                    continue
                g = p.grad
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                if p.ndim >= 2:
                    # norms and biases are not decayed
                    p.data -= group_lr * self.weight_decay * p.data
                p.data -= group_lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
