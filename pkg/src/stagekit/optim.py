"""Adam optimizer, exponential learning-rate schedule, and a finite-difference
gradient checker that arbitrates every analytic gradient in the package."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GradientError(ValueError):
    """Non-finite gradient handed to the optimizer."""


@dataclass
class OptimizerState:
    """Per-parameter Adam moment accumulators."""
    m: np.ndarray  # first moment
    v: np.ndarray  # second moment
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, beta1=0.9, beta2=0.999, eps=1e-8) -> "OptimizerState":
        params = np.asarray(params, dtype=np.float64)
        return cls(m=np.zeros_like(params), v=np.zeros_like(params),
                   beta1=beta1, beta2=beta2, eps=eps)


def step(state: OptimizerState, params, grads, lr: float) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter vector."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, "
                         f"state {state.m.shape}")
    bad = ~np.isfinite(grads)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise GradientError(f"non-finite gradient at parameter index {idx}")
    state.step_count += 1
    t = state.step_count
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass(frozen=True)
class LrSchedule:
    lr_init: float
    lr_final: float
    total_steps: int

    def __post_init__(self):
        if self.lr_init <= 0 or self.lr_final <= 0 or self.total_steps <= 0:
            raise ValueError("learning rates and step count must be positive")

    def lr(self, t: int) -> float:
        frac = min(max(t, 0), self.total_steps) / self.total_steps
        return self.lr_init * (self.lr_final / self.lr_init) ** frac


def exponential_to_one_percent(lr_init: float, total_steps: int) -> LrSchedule:
    """Default schedule: decay to 1% of the initial rate over the budget."""
    return LrSchedule(lr_init=lr_init, lr_final=0.01 * lr_init, total_steps=total_steps)


def check_gradient(loss_fn, params, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_fn(params) must return (value, grad).  Sample points must stay away
    from declared kinks of the loss (Huber corner, hinge corner, pixel-cell
    boundaries of bilinear samples); the error there is meaningless.
    """
    params = np.asarray(params, dtype=np.float64)
    _, grad = loss_fn(params)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise ValueError(f"gradient shape {grad.shape} != params shape {params.shape}")
    worst = 0.0
    for i in range(params.size):
        p_plus = params.copy()
        p_minus = params.copy()
        p_plus.flat[i] += h
        p_minus.flat[i] -= h
        f_plus, _ = loss_fn(p_plus)
        f_minus, _ = loss_fn(p_minus)
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError(f"loss not finite at perturbed point (coordinate {i})")
        g_fd = (f_plus - f_minus) / (2.0 * h)
        err = abs(g_fd - grad.flat[i]) / max(1.0, abs(g_fd))
        worst = max(worst, err)
    return worst
