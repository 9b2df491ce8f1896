"""Adam with bias-corrected moment estimates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def snapshot(self) -> dict:
        return {"t": self.t, "m": {k: a.copy() for k, a in self.m.items()},
                "v": {k: a.copy() for k, a in self.v.items()}}

    def restore(self, snap: dict) -> None:
        self.t = snap["t"]
        self.m = {k: a.copy() for k, a in snap["m"].items()}
        self.v = {k: a.copy() for k, a in snap["v"].items()}


def adam_step(params: dict, grads: dict, s: AdamState) -> tuple[dict, AdamState]:
    """Apply one Adam update in place to the arrays in ``params``.

    The step is refused (nothing is modified) when any gradient is non-finite.
    """
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {k!r} {params[k].shape}")
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient for parameter {k!r}; step aborted")
    s.t += 1
    bc1 = 1.0 - s.beta1 ** s.t
    bc2 = 1.0 - s.beta2 ** s.t
    for k, g in grads.items():
        if k not in s.m:
            s.m[k] = np.zeros_like(params[k])
            s.v[k] = np.zeros_like(params[k])
        m, v = s.m[k], s.v[k]
        m *= s.beta1
        m += (1.0 - s.beta1) * g
        v *= s.beta2
        v += (1.0 - s.beta2) * (g * g)
        params[k] -= s.lr * (m / bc1) / (np.sqrt(v / bc2) + s.eps)
    return params, s


class Adam:
    """Convenience wrapper binding an :class:`AdamState` to a ParameterSet."""

    def __init__(self, params, lr: float = 1e-3, **kw):
        self.params = params
        self.state = AdamState(lr=lr, **kw)

    def step(self) -> None:
        values = {k: p.value for k, p in self.params.items()}
        adam_step(values, self.params.grads(), self.state)
