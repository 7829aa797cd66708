"""Finite-difference verification of tape gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def grad_check(f, tensors: list[Tensor], h: float = 1e-5,
               max_coords: int = 16, seed: int = 0) -> float:
    """Max discrepancy between tape gradients of f() and central differences.

    f must rebuild its computation and return a scalar Tensor on every call.
    Up to max_coords coordinates are sampled per tensor. The error is relative
    where the gradient has magnitude, absolute below 1e-6.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.grad = None
    f().backward()
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    for t, g in zip(tensors, grads):
        flat = t.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = float(f().data)
            flat[c] = orig - h
            down = float(f().data)
            flat[c] = orig
            fd = (up - down) / (2.0 * h)
            tape = g.reshape(-1)[c]
            denom = max(abs(fd), abs(tape))
            err = abs(fd - tape) if denom < 1e-6 else abs(fd - tape) / denom
            worst = max(worst, err)
    for t in tensors:
        t.grad = None
    return worst
