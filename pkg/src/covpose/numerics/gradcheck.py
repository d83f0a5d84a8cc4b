"""Central finite-difference checks for the autodiff engine."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(f: Callable[[], Tensor], t: Tensor, eps: float = 1e-5) -> np.ndarray:
    """d f / d t by central differences; ``f`` rebuilds the graph on each call."""
    g = np.zeros_like(t.data, dtype=np.float64)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f().data)
        flat[i] = orig - eps
        fm = float(f().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6,
                       scale: float | None = None) -> float:
    """Elementwise ``|a - n| / max(|a|, |n|, floor * scale)``, maximised.

    ``scale`` defaults to ``max(1, max|a|)``. The floor keeps entries whose
    true gradient is exactly zero (a key bias under the shift invariance of
    softmax, say) from dividing central-difference roundoff by a tiny number.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if not a.size:
        return 0.0
    if scale is None:
        scale = max(1.0, float(np.max(np.abs(a))))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)
    return float(np.max(np.abs(a - n) / denom))


def gradcheck(f: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
              max_entries: int | None = None, seed: int = 0, floor: float = 1e-6) -> float:
    """Return the worst relative error between backprop and central differences.

    Inputs must be float64 leaves with ``requires_grad``. With ``max_entries``
    only a seeded random subset of each input's entries is perturbed. The
    error floor is scaled by the largest analytic gradient over all inputs.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("gradcheck needs float64 inputs")
        t.grad = None
    backward(f())
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad for t in inputs]
    scale = max([1.0] + [float(np.max(np.abs(a))) for a in analytic if a.size])
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        picks = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            picks = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        num = np.empty(len(picks))
        for j, i in enumerate(picks):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            num[j] = (fp - fm) / (2 * eps)
        worst = max(worst, max_relative_error(a.reshape(-1)[picks], num, floor, scale))
    return worst
