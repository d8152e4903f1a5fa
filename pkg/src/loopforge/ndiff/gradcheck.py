"""Finite-difference verification harness for the tape engine."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def grad_check(f, x: Tensor, eps: float = 1e-6) -> float:
    """Compare analytic gradients of a scalar-valued closure against central
    differences, coordinate by coordinate.

    Returns max over coordinates of |analytic - numeric| / max(1e-12,
    |analytic| + |numeric|). The closure must be deterministic and fp64.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    loss = f(probe)
    loss.backward()
    analytic = probe.grad.reshape(-1).copy()

    flat = x.data.reshape(-1).copy()
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(Tensor(flat.reshape(x.shape))).data)
        flat[i] = orig - eps
        lo = float(f(Tensor(flat.reshape(x.shape))).data)
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
