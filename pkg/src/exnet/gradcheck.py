"""Finite-difference gradient oracle.

``finite_diff_grad`` estimates d f / d x[i] by central differences in
float64. It is the independent reference the autodiff implementation is
checked against: the function under test is re-evaluated from scratch for
every probe, so the estimate shares no code path with ``backward``.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


def finite_diff_grad(
    f: Callable[[], float],
    x: np.ndarray,
    indices: Iterable[tuple] | None = None,
    h: float = 1e-4,
) -> dict[tuple, float]:
    """Central-difference df/dx at the given flat or nd indices.

    ``f`` must be a pure function of the current contents of ``x`` (and
    anything else it closes over); ``x`` is perturbed in place and restored.
    Returns {index: derivative}.
    """
    if x.dtype != np.float64:
        raise TypeError(f"finite differences want float64 arrays, got {x.dtype}")
    if indices is None:
        indices = list(np.ndindex(x.shape))
    out: dict[tuple, float] = {}
    for idx in indices:
        idx = tuple(np.atleast_1d(idx)) if not isinstance(idx, tuple) else idx
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        out[idx] = (fp - fm) / (2.0 * h)
    return out


def sample_indices(
    shape: Sequence[int], n: int, rng: np.random.Generator
) -> list[tuple]:
    """Up to ``n`` distinct nd-indices drawn uniformly from an array shape."""
    total = int(np.prod(shape)) if shape else 1
    count = min(n, total)
    flat = rng.choice(total, size=count, replace=False)
    return [np.unravel_index(i, shape) if shape else () for i in flat]


def relative_error(analytic: float, numeric: float, floor: float = 1e-3) -> float:
    """|a - n| over max(|a|, |n|, floor); the floor keeps near-zero
    derivatives from turning rounding noise into spurious blowups."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def max_relative_error(
    f: Callable[[], float],
    x: np.ndarray,
    analytic: np.ndarray,
    indices: Iterable[tuple] | None = None,
    h: float = 1e-4,
) -> float:
    """Worst relative error between analytic gradients and the oracle."""
    numeric = finite_diff_grad(f, x, indices=indices, h=h)
    return max(relative_error(float(analytic[i]), v) for i, v in numeric.items())
