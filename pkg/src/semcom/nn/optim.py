"""Adam without bias correction.

The update is ``theta -= eta * rho / sqrt(nu + eps)`` with ``rho`` and ``nu``
the raw exponential moving averages of the gradient and its square.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError, ShapeError


@dataclass
class AdamState:
    eta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    rho: list = field(default_factory=list)
    nu: list = field(default_factory=list)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


def adam_step(state, params, grads=None):
    """Apply one update to ``params`` (Tensors) in place and return ``state``.

    ``grads`` defaults to each parameter's ``.grad``; a missing grad counts as
    zero. Nothing is modified if any gradient is non-finite or mis-shaped.
    """
    if grads is None:
        grads = [p.grad for p in params]
    grads = [np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64) for p, g in zip(params, grads)]
    if len(grads) != len(params):
        raise ShapeError("one gradient per parameter required")
    for p, g in zip(params, grads):
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape}",
                             expected=p.data.shape, actual=g.shape)
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to adam_step")
    if not state.rho:
        state.rho = [np.zeros_like(p.data) for p in params]
        state.nu = [np.zeros_like(p.data) for p in params]
    elif len(state.rho) != len(params):
        raise ShapeError("optimizer state was built for a different parameter list")

    b1, b2 = state.beta1, state.beta2
    for i, (p, g) in enumerate(zip(params, grads)):
        state.rho[i] = b1 * state.rho[i] + (1.0 - b1) * g
        state.nu[i] = b2 * state.nu[i] + (1.0 - b2) * g * g
        p.data = p.data - state.eta * state.rho[i] / np.sqrt(state.nu[i] + state.epsilon)
    state.t += 1
    return state


class Adam:
    """Binds an :class:`AdamState` to a fixed parameter list."""

    def __init__(self, params, eta=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.state = AdamState(eta=eta, beta1=beta1, beta2=beta2, epsilon=epsilon)

    def step(self, grads=None):
        adam_step(self.state, self.params, grads)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
