"""Discrete-time Leaky Integrate-and-Fire dynamics with a soft reset.

Membrane update per step: u[t] = gamma * u[t-1] + I[t] - s[t-1] * v_th,
spikes s[t] = 1 where u[t] >= v_th. The forward pass keeps the hard
threshold; the backward pass substitutes the arctangent surrogate for the
Heaviside derivative, so gradients flow through the whole unrolled window
(including the reset term, unless ``detach_reset`` is set).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, _accum, record_op, stack


@dataclass(frozen=True)
class LifParams:
    gamma: float = 0.5
    v_th: float = 1.0
    alpha: float = 2.0
    detach_reset: bool = False

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"leak coefficient gamma must lie in (0,1), got {self.gamma}")
        if self.v_th <= 0:
            raise ValueError(f"threshold v_th must be positive, got {self.v_th}")
        if self.alpha <= 0:
            raise ValueError(f"surrogate slope alpha must be positive, got {self.alpha}")


@dataclass
class LifState:
    """Membrane potentials and previous-step spikes, one entry per neuron."""
    u: Tensor
    s_prev: Tensor


def zero_state(shape, dtype=None) -> LifState:
    u = Tensor(np.zeros(shape, dtype=dtype or np.float32))
    s = Tensor(np.zeros(shape, dtype=dtype or np.float32))
    return LifState(u=u, s_prev=s)


def surrogate_grad(z, alpha):
    """Arctangent surrogate derivative g(z) = (a/2) / (1 + (pi*a/2 * z)^2)."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    z = z.data if isinstance(z, Tensor) else np.asarray(z)
    u = (np.pi * alpha / 2.0) * z
    return (alpha / 2.0) / (1.0 + u * u)


def spike(u, v_th, alpha):
    """Hard threshold forward (u >= v_th), surrogate-derivative backward."""
    data = (u.data >= v_th).astype(u.data.dtype)
    out, rec = record_op(data, (u,), None)
    if rec:
        def backward():
            _accum(u, surrogate_grad(u.data - v_th, alpha) * out.grad)
        out._backward = backward
    return out


def soft_spike(u, v_th, alpha):
    """Smooth firing curve whose exact derivative is ``surrogate_grad``.

    Used to verify the unrolled backward pass against finite differences:
    the hard threshold is flat almost everywhere, so the check runs on this
    consistent smooth twin instead.
    """
    z = u.data - v_th
    data = 0.5 + np.arctan((np.pi * alpha / 2.0) * z) / np.pi
    out, rec = record_op(data.astype(u.data.dtype), (u,), None)
    if rec:
        def backward():
            _accum(u, surrogate_grad(u.data - v_th, alpha) * out.grad)
        out._backward = backward
    return out


def lif_step(state, current, params, soft=False):
    """One membrane update and firing decision.

    Returns (spikes, new_state); new_state carries the updated membrane and
    the spikes just emitted. The reset subtracts v_th using the PREVIOUS
    step's spikes, i.e. the reset lands on the step after the spike.
    """
    if current.shape != state.u.shape:
        raise ShapeError(
            f"lif_step: current shape {current.shape} != state shape {state.u.shape}"
        )
    if not np.all(np.isfinite(current.data)):
        raise ValueError("lif_step: non-finite input current")
    s_prev = state.s_prev.detach() if params.detach_reset else state.s_prev
    u_new = state.u * params.gamma + current - s_prev * params.v_th
    fire = soft_spike if soft else spike
    spikes = fire(u_new, params.v_th, params.alpha)
    return spikes, LifState(u=u_new, s_prev=spikes)


def lif_scan(x_temporal, params, state=None, soft=False):
    """Run a LIF layer over a [T, ...] input, returning stacked spikes.

    State defaults to zeros at t=0 for every call, so each sample window is
    independent of whatever ran before it.
    """
    t_steps = x_temporal.shape[0]
    if t_steps < 1:
        raise ShapeError("lif_scan: need at least one timestep")
    if state is None:
        state = zero_state(x_temporal.shape[1:], dtype=x_temporal.dtype)
    outs = []
    for t in range(t_steps):
        s, state = lif_step(state, x_temporal[t], params, soft=soft)
        outs.append(s)
    return stack(outs, axis=0)
