from __future__ import annotations

import hashlib
from collections import OrderedDict

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Ordered name -> trainable Tensor map with per-parameter ADAM moments."""

    def __init__(self, named=()):
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        for name, p in named:
            self.add(name, p)

    @classmethod
    def from_module(cls, module, prefix: str = "") -> "ParamStore":
        return cls(module.named_parameters(prefix))

    def add(self, name: str, p: Tensor) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        self.params[name] = p
        self.m[name] = np.zeros_like(p.data)
        self.v[name] = np.zeros_like(p.data)

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, p in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected ADAM update of every parameter; gradients are cleared afterwards."""
    missing = [n for n, p in store.params.items() if p.grad is None]
    if missing:
        raise ValueError(f"missing gradients for {missing[:5]}")
    store.step += 1
    c1 = 1.0 - beta1 ** store.step
    c2 = 1.0 - beta2 ** store.step
    for name, p in store.params.items():
        g = p.grad
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= update.astype(p.data.dtype, copy=False)
        p.grad = None
