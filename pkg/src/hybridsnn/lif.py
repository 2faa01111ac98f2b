"""Leaky integrate-and-fire neuron core.

The discrete update is the forward-Euler step of

    tau dV/dt = -(V - V_rest) + X

followed by a Heaviside spike test (``H(0) = 1``) and a soft reset that
subtracts the threshold from every neuron that fired.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError


@dataclass(frozen=True)
class LifParams:
    tau: float = 3.0
    v_th: float = 1.0
    v_rest: float = 0.0

    def __post_init__(self):
        if not self.tau >= 1.0:
            raise ContractError(f"tau must be >= 1 for a stable Euler leak, got {self.tau}")
        if not self.v_th > self.v_rest:
            raise ContractError("v_th must exceed v_rest")


@dataclass
class LifState:
    """Membrane potentials of one layer, shape (C, H, W)."""

    v: np.ndarray

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape))

    @property
    def shape(self):
        return self.v.shape


def lif_step(state, input_current, params, dt=1.0):
    """Advance one Euler step. Returns ``(new_state, spikes)``.

    ``dt`` scales the leak gain to ``dt / tau``; the default of one step per
    time constant unit is the network's native discretization.
    """
    x = np.asarray(input_current, dtype=np.float64)
    if x.shape != state.v.shape:
        raise ContractError(f"input shape {x.shape} does not match state shape {state.v.shape}")
    v, s = kernels.lif_step(state.v, x, dt / params.tau, params.v_rest, params.v_th)
    return LifState(v), s


def set_boundary_condition(state, s_init):
    """Overwrite the membrane potentials with ``s_init``. No clamping."""
    s_init = np.asarray(s_init, dtype=np.float64)
    if s_init.shape != state.v.shape:
        raise ContractError(f"init shape {s_init.shape} does not match state shape {state.v.shape}")
    return LifState(s_init.copy())


def analytic_subthreshold(v0, x_const, params, t):
    """Exact continuous-time potential under constant drive, ignoring spikes."""
    target = params.v_rest + x_const
    return target + (v0 - target) * math.exp(-t / params.tau)
