"""AdamW with decoupled weight decay operating on ModelParams containers."""

from dataclasses import dataclass, replace

import numpy as np

from .net import Gradients, ModelParams, zeros_like_params

__all__ = ["OptimState", "init_optim", "adamw_step", "cosine_lr"]


@dataclass
class OptimState:
    step: int
    m: Gradients  # first-moment estimates
    v: Gradients  # second-moment estimates
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


def init_optim(
    params: ModelParams,
    lr: float = 1e-5,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> OptimState:
    return OptimState(
        step=0,
        m=zeros_like_params(params),
        v=zeros_like_params(params),
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        weight_decay=weight_decay,
    )


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine decay from base_lr to 0 over total_steps."""
    if total_steps <= 0:
        return base_lr
    t = min(step, total_steps) / total_steps
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * t))


def adamw_step(params: ModelParams, grads: Gradients, state: OptimState, lr=None):
    """One decoupled-weight-decay Adam update; returns (new_params, new_state).

    The decay term lr * wd * theta is applied outside the adaptive
    m_hat / (sqrt(v_hat) + eps) rescaling. lr overrides state.lr for this
    step (schedules); the stored lr is unchanged.
    """
    t = state.step + 1
    step_lr = state.lr if lr is None else lr
    b1, b2 = state.beta1, state.beta2

    new_m = state.m.map(lambda m, g: b1 * m + (1.0 - b1) * g, grads)
    new_v = state.v.map(lambda v, g: b2 * v + (1.0 - b2) * g * g, grads)
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t

    def update(theta, m, v):
        m_hat = m / c1
        v_hat = v / c2
        return theta - step_lr * (m_hat / (np.sqrt(v_hat) + state.eps)
                                  + state.weight_decay * theta)

    new_params = params.map(update, new_m, new_v)
    new_state = replace(state, step=t, m=new_m, v=new_v)
    return new_params, new_state
