"""Shared test utilities: the central finite-difference gradient oracle.

Kept independent of the engine's backward pass on purpose: it only ever
calls the forward closure, so it can arbitrate analytic gradients.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from tempattn.autodiff import Node


def numerical_grad(loss_fn: Callable[[], float], param: Node, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of loss_fn w.r.t. every element of param.

    Perturbs param.value in place and restores it.
    """
    grad = np.zeros_like(param.value)
    flat = param.value.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn()
        flat[i] = orig - step
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1e-8, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck(build_loss: Callable[[], Node], params: Iterable[Node],
              step: float = 1e-4, tol: float = 1e-4) -> dict[str, float]:
    """Compare backward() gradients of build_loss() against central differences.

    build_loss must rebuild the graph from the (possibly perturbed) current
    parameter values on every call.  Returns the max relative error seen per
    parameter index; asserts every one is within tol.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = build_loss()
    loss.backward()

    def loss_value() -> float:
        return float(build_loss().value)

    errors: dict[str, float] = {}
    for idx, p in enumerate(params):
        assert p.grad is not None, f"param {idx} received no gradient"
        num = numerical_grad(loss_value, p, step=step)
        err = relative_error(p.grad, num)
        errors[str(idx)] = err
        assert err <= tol, f"param {idx}: relative error {err:.3e} exceeds {tol:.1e}"
    return errors
