"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_grad(fn: Callable[[], Tensor], target: Tensor, indices=None, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. ``target.data`` at ``indices`` (flat)."""
    flat = target.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = []
    for i in indices:
        old = flat[i]
        flat[i] = old + h
        fp = fn().item()
        flat[i] = old - h
        fm = fn().item()
        flat[i] = old
        out.append((fp - fm) / (2 * h))
    return np.asarray(out)


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
                    max_coords: int | None = None, rng: np.random.Generator | None = None,
                    floor: float = 1e-6) -> float:
    """Compare analytic and finite-difference gradients of scalar ``fn()``.

    When ``max_coords`` is set, at most that many randomly chosen coordinates of
    each input are probed. Returns the max relative error over all inputs.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in inputs:
        t.grad = None
    loss = fn()
    loss.backward()
    worst = 0.0
    for t in inputs:
        analytic = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        if max_coords is not None and t.size > max_coords:
            idx = np.sort(rng.choice(t.size, size=max_coords, replace=False))
        else:
            idx = np.arange(t.size)
        numeric = numeric_grad(fn, t, idx, h)
        worst = max(worst, relative_error(analytic[idx], numeric, floor))
    for t in inputs:
        t.grad = None
    return worst
