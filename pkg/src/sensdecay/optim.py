"""Limited-memory BFGS with Armijo backtracking and optional box projection."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ARMIJO_C1 = 1e-4
# approximate Wolfe test for steps whose objective change is below roundoff
WOLFE_DELTA = 0.1
WOLFE_SIGMA = 0.9
ROUNDOFF_RTOL = 1e-13


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    stalled: bool = False
    history: list[float] = field(default_factory=list)

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.grad), initial=0.0))


def _project(x, lower, upper):
    if lower is None and upper is None:
        return x
    return np.clip(x, lower, upper)


def _pg_norm(x, g, lower, upper) -> float:
    """Infinity norm of the projected gradient (plain gradient when unconstrained)."""
    if lower is None and upper is None:
        return float(np.max(np.abs(g), initial=0.0))
    return float(np.max(np.abs(_project(x - g, lower, upper) - x), initial=0.0))


def _active_set(x, g, lower, upper):
    if lower is None and upper is None:
        return None
    return ((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0))


def lbfgs(fg: Callable[[np.ndarray], tuple[float, np.ndarray]], x0, *, memory=10, gtol=1e-8,
          max_iter=500, max_halvings=60, lower=None, upper=None,
          initial_scale: float | None = None) -> LbfgsResult:
    """Minimize ``f`` given ``fg(x) -> (f, grad)``.

    Steps are accepted on the Armijo condition, or, once objective
    differences drop to roundoff level, on the approximate Wolfe test on the
    directional derivative; accepted iterates therefore never increase the
    objective by more than roundoff. When a line search exhausts
    ``max_halvings`` the best iterate is returned with ``stalled=True``.

    Args:
        initial_scale: Diagonal of the initial inverse Hessian guess used
            until the first curvature pair is stored. Defaults to
            ``1 / max|g|``.
    """
    shape = np.shape(x0)
    x = _project(np.array(x0, dtype=float).ravel(), lower, upper)
    f, g = fg(x.reshape(shape))
    g = np.asarray(g, dtype=float).ravel()
    if not np.isfinite(f):
        raise FloatingPointError("objective is not finite at the starting point")
    history = [f]
    mem: deque[tuple[np.ndarray, np.ndarray, float]] = deque(maxlen=memory)
    for it in range(max_iter):
        if _pg_norm(x, g, lower, upper) <= gtol:
            return LbfgsResult(x.reshape(shape), f, g.reshape(shape), it, True, history=history)
        # variables held at a bound by the gradient stay fixed this iteration
        active = _active_set(x, g, lower, upper)
        # two-loop recursion
        q = g.copy()
        if active is not None:
            q[active] = 0.0
        alphas = []
        for s, y, rho in reversed(mem):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if mem:
            s, y, _ = mem[-1]
            gamma = (s @ y) / (y @ y)
        elif initial_scale is not None:
            gamma = initial_scale
        else:
            gamma = 1.0 / max(float(np.max(np.abs(g))), 1e-300)
        r = gamma * q
        for (s, y, rho), a in zip(mem, reversed(alphas)):
            b = rho * (y @ r)
            r += (a - b) * s
        d = -r
        if active is not None:
            d[active] = 0.0
        if not g @ d < 0:
            mem.clear()
            d = -gamma * g
            if active is not None:
                d[active] = 0.0
        step = 1.0
        accepted = False
        band = ROUNDOFF_RTOL * max(abs(f), 1e-300)
        for _ in range(max_halvings + 1):
            x_new = _project(x + step * d, lower, upper)
            f_new, g_new = fg(x_new.reshape(shape))
            if np.isfinite(f_new):
                dphi0 = g @ (x_new - x)
                if f_new <= f + ARMIJO_C1 * dphi0:
                    accepted = True
                    break
                dphi = np.ravel(g_new) @ (x_new - x)
                if f_new <= f + band and WOLFE_SIGMA * dphi0 <= dphi <= (2 * WOLFE_DELTA - 1) * dphi0:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            return LbfgsResult(x.reshape(shape), f, g.reshape(shape), it, False, stalled=True, history=history)
        g_new = np.asarray(g_new, dtype=float).ravel()
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.sqrt((s @ s) * (y @ y)) and sy > 0:
            mem.append((s, y, 1.0 / sy))
        if f_new == f and not np.any(s):
            return LbfgsResult(x.reshape(shape), f, g.reshape(shape), it, False, stalled=True, history=history)
        x, f, g = x_new, f_new, g_new
        history.append(f)
    conv = _pg_norm(x, g, lower, upper) <= gtol
    return LbfgsResult(x.reshape(shape), f, g.reshape(shape), max_iter, conv, history=history)
