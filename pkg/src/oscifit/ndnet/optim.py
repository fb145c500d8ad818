from dataclasses import dataclass, field

import numpy as np

from .layers import NonFiniteError

__all__ = ["AdamState", "adam_step", "Adam", "mse", "mse_grad"]


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(params, grads, state):
    """One bias-corrected Adam update, applied to ``params`` in place.

    Raises NonFiniteError (before touching anything) if a gradient holds NaN/Inf.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and Adam moments differ in count")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteError(
                f"non-finite gradient in tensor {i} (shape {g.shape}, {bad} bad entries) "
                f"at Adam step {state.step + 1}"
            )
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / corr2)
        denom += state.eps
        p -= (state.lr / corr1) * m / denom
    return params, state


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.state = AdamState.for_params(params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, grads):
        adam_step(self.params, grads, self.state)


def mse(pred, target):
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    d = pred.astype(np.float64) - target
    return float(np.mean(d * d))


def mse_grad(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return (2.0 / pred.size) * (pred - target)
