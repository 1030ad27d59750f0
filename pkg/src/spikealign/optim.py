"""Named parameter storage, Adam, and the cosine learning-rate schedule."""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .autodiff import Tensor


class ParamStore:
    """Ordered name -> Tensor map for everything the optimizer updates."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, name, tensor):
        if name in self._params:
            raise ValueError(f"parameter '{name}' already registered")
        if not isinstance(tensor, Tensor):
            tensor = Tensor(tensor)
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name):
        return self._params[name]

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def count(self):
        return sum(p.data.size for p in self._params.values())

    def state_arrays(self):
        return {name: p.data for name, p in self._params.items()}

    def load_arrays(self, arrays):
        for name, p in self._params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter '{name}'")
            arr = np.asarray(arrays[name])
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"parameter '{name}': stored shape {arr.shape} != expected {p.data.shape}"
                )
            p.data = arr.astype(p.data.dtype, copy=True)

    def checksum(self):
        """Order- and value-sensitive digest of all parameters."""
        h = hashlib.sha256()
        for name, p in self._params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


class Adam:
    """Standard Adam with bias correction over a ParamStore.

    Parameters whose gradient accumulator is unset are skipped, so an
    update with all-zero gradients leaves every parameter unchanged.
    """

    def __init__(self, params: ParamStore, lr=3e-3, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self):
        self.params.zero_grad()

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class CosineSchedule:
    """Half-cosine decay from base_lr at step 0 to floor at total_steps."""

    def __init__(self, base_lr, total_steps, floor=0.0):
        if base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {base_lr}")
        if total_steps <= 0:
            raise ValueError(f"total_steps must be positive, got {total_steps}")
        if floor < 0 or floor > base_lr:
            raise ValueError(f"floor must lie in [0, base_lr], got {floor}")
        self.base_lr = base_lr
        self.total_steps = int(total_steps)
        self.floor = floor

    def lr(self, step):
        if step < 0 or step > self.total_steps:
            raise ValueError(f"step {step} outside [0, {self.total_steps}]")
        cos = 0.5 * (1.0 + math.cos(math.pi * step / self.total_steps))
        return self.floor + (self.base_lr - self.floor) * cos
