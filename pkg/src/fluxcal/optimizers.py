"""Unconstrained minimization of differentiable objectives.

Three interchangeable methods: L-BFGS with a backtracking line search, SGD
with momentum, and Adam. L-BFGS terminates when the objective change drops
below the configured tolerance; SGD and Adam run for exactly max_iters steps.
A central finite-difference gradient is provided as a testing oracle.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ARMIJO_C1 = 1e-4
MIN_STEP = 1e-20


class NonFiniteObjective(ArithmeticError):
    """Objective or gradient produced a non-finite value."""


@dataclass(frozen=True)
class OptimizerConfig:
    """Method selection plus hyperparameters.

    learning_rate is the SGD/Adam step size and the initial step scale for
    L-BFGS. tolerance is the L-BFGS objective-change stopping threshold;
    history its memory length.
    """

    method: str = "lbfgs"
    learning_rate: float = 1.0
    momentum: float = 0.7
    betas: tuple[float, float] = (0.7, 0.999)
    tolerance: float = 1e-10
    max_iters: int = 200
    history: int = 10

    def __post_init__(self):
        if self.method not in ("lbfgs", "sgd", "adam"):
            raise ValueError(f"unknown method {self.method!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if not all(0.0 <= b < 1.0 for b in self.betas):
            raise ValueError("betas must be in [0, 1) elementwise")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.history < 1:
            raise ValueError("history must be >= 1")

    @staticmethod
    def lbfgs(**kw) -> "OptimizerConfig":
        return OptimizerConfig(method="lbfgs", learning_rate=1.0, tolerance=1e-10, **kw)

    @staticmethod
    def sgd(**kw) -> "OptimizerConfig":
        kw.setdefault("max_iters", 500)
        return OptimizerConfig(method="sgd", learning_rate=1.0, momentum=0.7, **kw)

    @staticmethod
    def adam(**kw) -> "OptimizerConfig":
        kw.setdefault("max_iters", 500)
        return OptimizerConfig(
            method="adam", learning_rate=0.002, betas=(0.7, 0.999), **kw
        )


@dataclass(frozen=True)
class MinimizeResult:
    x_star: np.ndarray
    final_cost: float
    iterations: int
    converged: bool
    cost_trace: list[float] = field(default_factory=list)


def _check_finite(value, what: str):
    if not np.all(np.isfinite(value)):
        raise NonFiniteObjective(f"{what} is non-finite")


def _two_loop(grad, s_list, y_list, rho_list) -> np.ndarray:
    """L-BFGS two-loop recursion for the search direction -H*grad."""
    q = grad.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    # Scale the initial Hessian by the most recent curvature pair.
    s, y = s_list[-1], y_list[-1]
    q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _minimize_lbfgs(objective, gradient, x0, cfg) -> MinimizeResult:
    x = np.asarray(x0, dtype=float).copy()
    f = float(objective(x))
    _check_finite(f, "objective")
    g = np.asarray(gradient(x), dtype=float)
    _check_finite(g, "gradient")
    trace = [f]

    s_list: deque = deque(maxlen=cfg.history)
    y_list: deque = deque(maxlen=cfg.history)
    rho_list: deque = deque(maxlen=cfg.history)

    iterations = 0
    converged = False
    for _ in range(cfg.max_iters):
        if not np.any(g):
            converged = True
            break
        if s_list:
            direction = _two_loop(g, s_list, y_list, rho_list)
            step = 1.0
        else:
            direction = -g
            step = cfg.learning_rate
        slope = g @ direction
        if slope >= 0.0:
            # Curvature memory produced a non-descent direction; reset.
            s_list.clear(), y_list.clear(), rho_list.clear()
            direction = -g
            step = cfg.learning_rate
            slope = g @ direction

        f_new = None
        while step > MIN_STEP:
            trial = x + step * direction
            f_trial = float(objective(trial))
            _check_finite(f_trial, "objective")
            if f_trial <= f + ARMIJO_C1 * step * slope:
                f_new = f_trial
                break
            step *= 0.5
        if f_new is None:
            # No descent step exists at machine precision: treat as converged.
            converged = True
            break

        x_new = x + step * direction
        g_new = np.asarray(gradient(x_new), dtype=float)
        _check_finite(g_new, "gradient")
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_list.append(s)
            y_list.append(y)
            rho_list.append(1.0 / sy)

        delta = f - f_new
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        iterations += 1
        if abs(delta) < cfg.tolerance:
            converged = True
            break

    return MinimizeResult(x, f, iterations, converged, trace)


def _minimize_sgd(objective, gradient, x0, cfg) -> MinimizeResult:
    x = np.asarray(x0, dtype=float).copy()
    f = float(objective(x))
    _check_finite(f, "objective")
    trace = [f]
    buf = np.zeros_like(x)
    for _ in range(cfg.max_iters):
        g = np.asarray(gradient(x), dtype=float)
        _check_finite(g, "gradient")
        buf = cfg.momentum * buf + g
        x = x - cfg.learning_rate * buf
        f = float(objective(x))
        _check_finite(f, "objective")
        trace.append(f)
    return MinimizeResult(x, f, cfg.max_iters, True, trace)


def _minimize_adam(objective, gradient, x0, cfg) -> MinimizeResult:
    x = np.asarray(x0, dtype=float).copy()
    f = float(objective(x))
    _check_finite(f, "objective")
    trace = [f]
    b1, b2 = cfg.betas
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    eps = 1e-8
    for t in range(1, cfg.max_iters + 1):
        g = np.asarray(gradient(x), dtype=float)
        _check_finite(g, "gradient")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        x = x - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        f = float(objective(x))
        _check_finite(f, "objective")
        trace.append(f)
    return MinimizeResult(x, f, cfg.max_iters, True, trace)


def minimize(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    cfg: OptimizerConfig | None = None,
) -> MinimizeResult:
    """Minimize objective from x0 with the configured method.

    Raises NonFiniteObjective if the objective or gradient ever evaluates to
    a non-finite value. Deterministic: identical inputs yield identical
    results.
    """
    if cfg is None:
        cfg = OptimizerConfig()
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise NonFiniteObjective("x0 is non-finite")
    if cfg.method == "lbfgs":
        return _minimize_lbfgs(objective, gradient, x0, cfg)
    if cfg.method == "sgd":
        return _minimize_sgd(objective, gradient, x0, cfg)
    return _minimize_adam(objective, gradient, x0, cfg)


def finite_difference_gradient(
    objective: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6
) -> np.ndarray:
    """Central-difference gradient, the testing oracle for analytic gradients."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (objective(xp) - objective(xm)) / (2.0 * h)
    return grad
