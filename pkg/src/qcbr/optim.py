"""Classical optimizers for the variational loops.

Both optimizers return the best iterate they visited, not the last one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgument, OptimizationFailure

Objective = Callable[[np.ndarray], float]


class OptimizerKind(str, Enum):
    SPSA = "SPSA"
    FD_QUASI_NEWTON = "FD_QUASI_NEWTON"


@dataclass(frozen=True)
class OptimizerConfig:
    kind: OptimizerKind = OptimizerKind.SPSA
    max_iterations: int = 300
    a: float = 0.2
    c: float = 0.1
    A: Optional[float] = None  # None -> 10% of max_iterations
    alpha: float = 0.602
    gamma: float = 0.101
    fd_step: float = 1e-5
    tolerance: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", OptimizerKind(self.kind))
        if self.max_iterations < 1:
            raise InvalidArgument("max_iterations must be >= 1")
        if self.c <= 0:
            raise InvalidArgument("SPSA perturbation c must be > 0")
        if self.tolerance <= 0:
            raise InvalidArgument("tolerance must be > 0")

    @property
    def stability(self) -> float:
        return 0.1 * self.max_iterations if self.A is None else self.A

    def with_(self, **changes) -> "OptimizerConfig":
        return replace(self, **changes)


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    trace: list[float]
    initial: float = math.nan

    def __iter__(self):
        # allows ``x, f, trace = spsa_minimize(...)``
        return iter((self.x, self.fun, self.trace))


def spsa_gains(config: OptimizerConfig, k: int) -> tuple[float, float]:
    """Step size a_k and perturbation size c_k at iteration ``k`` (0-based)."""
    a_k = config.a / (config.stability + k + 1) ** config.alpha
    c_k = config.c / (k + 1) ** config.gamma
    return a_k, c_k


def _checked(f: Objective, x: np.ndarray, trace: list[float]) -> float:
    value = float(f(x))
    if not math.isfinite(value):
        raise OptimizationFailure(f"objective returned {value}", trace)
    return value


def spsa_minimize(objective: Objective, x0, config: OptimizerConfig) -> OptimizeResult:
    """Spall's SPSA with Rademacher perturbations.

    Each iteration spends two evaluations on the gradient estimate and one on
    the new iterate, whose value is what the trace records.
    """
    rng = np.random.default_rng(config.seed)
    x = np.array(x0, dtype=float)
    trace: list[float] = []
    best_x, best_f = x.copy(), _checked(objective, x, trace)
    initial = best_f
    for k in range(config.max_iterations):
        a_k, c_k = spsa_gains(config, k)
        delta = rng.choice((-1.0, 1.0), size=x.shape)
        f_plus = _checked(objective, x + c_k * delta, trace)
        f_minus = _checked(objective, x - c_k * delta, trace)
        x = x - a_k * (f_plus - f_minus) / (2.0 * c_k) * delta
        fx = _checked(objective, x, trace)
        trace.append(fx)
        if fx < best_f:
            best_x, best_f = x.copy(), fx
    return OptimizeResult(best_x, best_f, trace, initial)


def fd_gradient(objective: Objective, x: np.ndarray, step: float, trace) -> np.ndarray:
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (_checked(objective, x + e, trace) - _checked(objective, x - e, trace)) / (2 * step)
    return grad


def fd_minimize(objective: Objective, x0, config: OptimizerConfig,
                gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> OptimizeResult:
    """BFGS on central finite-difference gradients with Armijo backtracking.

    ``gradient`` may supply the same central differences computed faster
    by the caller; by default they are taken coordinate by coordinate.
    """
    x = np.array(x0, dtype=float)
    trace: list[float] = []
    fx = _checked(objective, x, trace)
    best_x, best_f, initial = x.copy(), fx, fx

    def grad_at(point):
        if gradient is None:
            return fd_gradient(objective, point, config.fd_step, trace)
        g = np.asarray(gradient(point), dtype=float)
        if g.shape != point.shape or not np.all(np.isfinite(g)):
            raise OptimizationFailure("gradient is malformed or non-finite", trace)
        return g

    H = np.eye(x.size)
    grad = grad_at(x)
    for _ in range(config.max_iterations):
        if np.linalg.norm(grad) < config.tolerance:
            trace.append(fx)
            break
        direction = -H @ grad
        slope = float(grad @ direction)
        if slope >= 0:
            H = np.eye(x.size)
            direction, slope = -grad, -float(grad @ grad)
        step = 1.0
        while True:
            x_new = x + step * direction
            f_new = _checked(objective, x_new, trace)
            if f_new <= fx + 1e-4 * step * slope or step < 1e-12:
                break
            step *= 0.5
        grad_new = grad_at(x_new)
        s, y = x_new - x, grad_new - grad
        sy = float(s @ y)
        if sy > 1e-12:
            rho = 1.0 / sy
            I = np.eye(x.size)
            H = (I - rho * np.outer(s, y)) @ H @ (I - rho * np.outer(y, s)) + rho * np.outer(s, s)
        x, fx, grad = x_new, f_new, grad_new
        trace.append(fx)
        if fx < best_f:
            best_x, best_f = x.copy(), fx
        if step < 1e-12:
            break
    return OptimizeResult(best_x, best_f, trace, initial)


def minimize(objective: Objective, x0, config: OptimizerConfig,
             gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> OptimizeResult:
    """Dispatch on ``config.kind``; ``gradient`` is only used by the quasi-Newton method."""
    if config.kind is OptimizerKind.SPSA:
        return spsa_minimize(objective, x0, config)
    return fd_minimize(objective, x0, config, gradient)
