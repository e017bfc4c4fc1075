"""Finite-difference oracles for the tape"""
import logging
from typing import Callable, Dict, Iterable, Union

import numpy as np

from .autodiff import Node, Parameter, Tape

logger = logging.getLogger(__name__)

ScalarFn = Callable[[], float]


def finite_diff_grad(f: Callable[[Parameter], float], theta: Parameter, eps: float = 1e-6) -> np.ndarray:
    """Central differences of ``f`` with respect to every entry of ``theta``.

    ``f`` is evaluated with ``theta.value`` perturbed in place; the original value
    is restored afterwards.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    grad = np.zeros_like(theta.value)
    flat = theta.value.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = float(f(theta))
        flat[i] = original - eps
        minus = float(f(theta))
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * eps)
    return grad


def grad_check(
        forward: Callable[[Tape], Node],
        params: Union[Dict[str, Parameter], Iterable[Parameter]],
        eps: float = 1e-6,
        floor: float = 1e-2,
) -> float:
    """Max over parameters of ||analytic - numeric||_inf / max(||numeric||_inf, floor * largest).

    ``largest`` is the biggest numeric gradient entry of the whole model, so a
    parameter the loss is nearly invariant to (a norm scale feeding another norm)
    is measured against the model's gradient scale rather than its own round-off.
    ``forward`` builds the scalar loss on the tape it is given (the batch is
    closed over by the caller).
    """
    params = list(params.values()) if isinstance(params, dict) else list(params)
    for p in params:
        p.zero_grad()
    tape = Tape()
    loss = forward(tape)
    tape.backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}

    def evaluate(_):
        return float(forward(Tape()).value)

    numeric = {p.name: finite_diff_grad(evaluate, p, eps) for p in params}
    largest = max((float(np.max(np.abs(g), initial=0.0)) for g in numeric.values()), default=0.0)
    worst = 0.0
    for p in params:
        scale = max(float(np.max(np.abs(numeric[p.name]), initial=0.0)), floor * largest, 1e-12)
        err = float(np.max(np.abs(analytic[p.name] - numeric[p.name]), initial=0.0)) / scale
        logger.debug(f"grad_check {p.name}: relative error {err:.3e}")
        worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
