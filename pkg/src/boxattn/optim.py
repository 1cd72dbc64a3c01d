"""Adam with global-norm gradient clipping and a warmup/staircase schedule."""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter


def global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def clip_grads(params, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most `max_norm`."""
    norm = global_grad_norm(params)
    if max_norm > 0.0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


def adam_step(params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, clip_norm: float = 0.25) -> float:
    """One Adam update over `params`; returns the pre-clip gradient norm."""
    norm = clip_grads(params, clip_norm)
    for p in params:
        if p.grad is None:
            continue
        if not isinstance(p, Parameter):
            raise TypeError(f"adam_step expects Parameter instances, got {type(p).__name__}")
        if p.adam_m is None:
            p.adam_m = np.zeros_like(p.data)
            p.adam_v = np.zeros_like(p.data)
        p.adam_step_count += 1
        t = p.adam_step_count
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * p.grad
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * (p.grad * p.grad)
        m_hat = p.adam_m / (1.0 - beta1 ** t)
        v_hat = p.adam_v / (1.0 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return norm


def learning_rate(base_lr: float, iteration: int, warmup_iters: int,
                  warmup_factor: float, decay_steps=(), decay_rate: float = 0.1) -> float:
    """LR at a given iteration (0-based).

    Linear ramp from warmup_factor*base_lr to base_lr across warmup_iters,
    then multiplied by decay_rate at each milestone in decay_steps.
    """
    if warmup_iters > 0 and iteration < warmup_iters:
        alpha = iteration / warmup_iters
        scale = warmup_factor * (1.0 - alpha) + alpha
    else:
        scale = 1.0
    for step in decay_steps:
        if iteration >= step:
            scale *= decay_rate
    return base_lr * scale
