"""
Adam with bias correction, L2 weight decay folded into the gradient, and
named parameter groups carrying their own learning rates.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import DimensionError
from utils.tensor_engine import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moments for one parameter group."""
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def init(self, params: Dict[str, Tensor]) -> "AdamState":
        for name, p in params.items():
            self.m.setdefault(name, np.zeros_like(p.data))
            self.v.setdefault(name, np.zeros_like(p.data))
        return self


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: AdamState) -> Dict[str, Tensor]:
    """One Adam update in place; returns `params` for chaining."""
    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise DimensionError(f"adam_step: gradient of '{name}'", g.shape, p.shape)
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


@dataclass
class ParamGroup:
    name: str
    params: Dict[str, Tensor]
    lr: float


class Adam:
    """Adam over named parameter groups (e.g. graph stack vs conv/LSTM branches)."""

    def __init__(self, groups: Sequence[ParamGroup], weight_decay: float = 0.0,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 max_grad_norm: Optional[float] = None):
        self.groups = [g for g in groups if g.params]
        self.max_grad_norm = max_grad_norm
        self.states: Dict[str, AdamState] = {
            g.name: AdamState(lr=g.lr, beta1=betas[0], beta2=betas[1], eps=eps,
                              weight_decay=weight_decay).init(g.params)
            for g in self.groups
        }

    def all_params(self) -> List[Tensor]:
        return [p for g in self.groups for p in g.params.values()]

    def zero_grad(self):
        for p in self.all_params():
            p.zero_grad()

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in self.all_params()
                                 if p.grad is not None)))

    def step(self):
        scale = 1.0
        if self.max_grad_norm is not None:
            norm = self.grad_norm()
            if norm > self.max_grad_norm:
                scale = self.max_grad_norm / (norm + 1e-12)
                logger.debug("Clipping gradient norm %.4g to %.4g", norm, self.max_grad_norm)
        for group in self.groups:
            grads = {name: (p.grad * scale if p.grad is not None else None)
                     for name, p in group.params.items()}
            adam_step(group.params, {k: v for k, v in grads.items() if v is not None}, self.states[group.name])

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Flattened moments keyed '<group>/<m|v>/<param>' for checkpoints."""
        arrays = {}
        for group_name, state in self.states.items():
            for name in sorted(state.m):
                arrays[f"{group_name}/m/{name}"] = state.m[name]
                arrays[f"{group_name}/v/{name}"] = state.v[name]
        return arrays

    def state_meta(self) -> Dict[str, Dict[str, float]]:
        return {name: {"lr": s.lr, "t": s.t, "beta1": s.beta1, "beta2": s.beta2,
                       "eps": s.eps, "weight_decay": s.weight_decay}
                for name, s in self.states.items()}
