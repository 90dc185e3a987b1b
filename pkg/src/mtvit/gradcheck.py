"""Central finite-difference checks against tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), with 0 when both vanish."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < 1e-300:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def numeric_grad(
    fn: Callable[[], Tensor],
    param: Tensor,
    h: float = 1e-5,
    indices: np.ndarray | None = None,
) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. ``param`` (flat ``indices`` only, if given)."""
    flat = param.data.reshape(-1)
    idx = np.arange(flat.size) if indices is None else np.asarray(indices)
    out = np.zeros(idx.size, dtype=np.float64)
    with no_grad():
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn().data)
            flat[i] = orig - h
            fm = float(fn().data)
            flat[i] = orig
            out[j] = (fp - fm) / (2 * h)
    return out


def check_gradients(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    fraction: float = 1.0,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst per-parameter relative error between tape and numeric gradients.

    With ``fraction < 1`` a random subset of entries per parameter is checked
    (at least one entry each).
    """
    for p in params:
        p.zero_grad()
    fn().backward()
    worst = 0.0
    for p in params:
        n = p.data.size
        if fraction < 1.0:
            rng = rng or np.random.default_rng(0)
            k = max(1, int(round(fraction * n)))
            idx = np.sort(rng.choice(n, size=k, replace=False))
        else:
            idx = np.arange(n)
        tape = np.zeros(n) if p.grad is None else p.grad.reshape(-1)
        worst = max(worst, relative_error(tape[idx], numeric_grad(fn, p, h, idx)))
    return worst
