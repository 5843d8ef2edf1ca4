"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .core import Tensor, NonFiniteError, backward, no_grad, tape_scope


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - central| / max(1, |central|)``.

    ``f`` must be deterministic and return a single-element tensor.
    """
    x = Tensor(x.data.copy(), requires_grad=True)
    with tape_scope():
        out = f(x)
        if not np.all(np.isfinite(out.data)):
            raise NonFiniteError("function value is not finite")
        backward(out)
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(x).item()
            flat[i] = orig - h
            fm = f(x).item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"non-finite function value near coordinate {i}")
            numeric.reshape(-1)[i] = (fp - fm) / (2 * h)
    if not np.all(np.isfinite(analytic)):
        raise NonFiniteError("analytic gradient is not finite")
    return _relative_error(analytic, numeric)


def param_grad_check(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-5,
    coords_per_param: int = 4,
    seed: int = 0,
) -> float:
    """Finite-difference check over a random subset of coordinates of many parameters.

    Used for whole-model checks where probing every coordinate is too slow.
    """
    params = list(params)
    for p in params:
        p.grad = None
    with tape_scope():
        loss = loss_fn()
        backward(loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            grad = np.zeros_like(flat) if p.grad is None else p.grad.reshape(-1)
            picks = rng.choice(flat.size, size=min(coords_per_param, flat.size), replace=False)
            for i in picks:
                orig = flat[i]
                flat[i] = orig + h
                fp = loss_fn().item()
                flat[i] = orig - h
                fm = loss_fn().item()
                flat[i] = orig
                numeric = (fp - fm) / (2 * h)
                if not np.isfinite(numeric):
                    raise NonFiniteError("non-finite loss during finite differencing")
                worst = max(worst, abs(grad[i] - numeric) / max(1.0, abs(numeric)))
    return worst
