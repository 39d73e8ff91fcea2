"""Fixed-step explicit integrators over tape tensors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .autodiff import NonFiniteError, Tensor, as_tensor, check_finite


METHODS = ("euler", "rk4")


@dataclass(frozen=True)
class OdeConfig:
    method: str = "rk4"
    steps: int = 2

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown ODE method {self.method!r}; expected one of {METHODS}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")


def _euler(f, y, t, h):
    return y + f(y, t) * h


def _rk4(f, y, t, h):
    k1 = f(y, t)
    k2 = f(y + k1 * (h / 2), t + h / 2)
    k3 = f(y + k2 * (h / 2), t + h / 2)
    k4 = f(y + k3 * h, t + h)
    return y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6)


def integrate(
    f: Callable[[Tensor, float], Tensor], y0, t0: float, t1: float, cfg: OdeConfig
) -> Tensor:
    """Solve ``dy/dt = f(y, t)`` from ``t0`` to ``t1`` in ``cfg.steps`` uniform steps.

    Runs through tape ops, so gradients reach both ``y0`` and whatever
    parameters ``f`` closes over.
    """
    if not t1 > t0:
        raise ValueError(f"integrate: need t1 > t0, got [{t0}, {t1}]")
    step = _rk4 if cfg.method == "rk4" else _euler
    h = (t1 - t0) / cfg.steps
    y = as_tensor(y0)
    for i in range(cfg.steps):
        y = step(f, y, t0 + i * h, h)
        try:
            check_finite(y)
        except NonFiniteError as exc:
            raise NonFiniteError(f"integrate: non-finite state after step {i + 1}/{cfg.steps}") from exc
    return y
