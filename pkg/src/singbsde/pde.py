"""Finite differences for ``v''/2 = v^q`` on ``(0, L)`` with Dirichlet data ``n``.

The singular problem (``n = inf``) is never discretised; it is approached
by a ladder of finite boundary values with warm starts.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .errors import InvalidParameterError, NumericalError
from .model import conjugate_exponent
from .oracle import solve_vn


@dataclass(frozen=True)
class FDGrid:
    L: float
    m: int

    def __post_init__(self):
        if not self.L > 0:
            raise InvalidParameterError("L must be positive")
        if self.m < 3:
            raise InvalidParameterError("need at least 3 interior points")

    @property
    def h(self) -> float:
        return self.L / (self.m + 1)

    @property
    def x(self) -> np.ndarray:
        """All ``m + 2`` nodes, boundary included."""
        return np.arange(self.m + 2) * self.h


@dataclass(frozen=True)
class FDSolution:
    grid: FDGrid
    values: np.ndarray
    boundary_value: float
    newton_iters: int
    residual_inf: float

    def at(self, x) -> np.ndarray:
        """Piecewise-linear interpolation of the nodal values."""
        return np.interp(x, self.grid.x, self.values)


def _residual(v_full: np.ndarray, h: float, q: float) -> np.ndarray:
    v = v_full[1:-1]
    return 0.5 * (v_full[:-2] - 2.0 * v + v_full[2:]) / h**2 - v**q


def fd_solve_1d(
    q: float,
    L: float,
    n: float,
    grid: Optional[FDGrid] = None,
    v_init: Optional[np.ndarray] = None,
    max_iter: int = 200,
) -> FDSolution:
    """Damped Newton for the three-point scheme with ``v_0 = v_{m+1} = n``.

    Converged when ``max |R| <= 1e-10 (1 + n^q)``.  The default initial
    guess is the constant ``min(n, v_n)`` with ``v_n`` the exact trough value.
    """
    conjugate_exponent(q)
    if not n >= 0:
        raise InvalidParameterError("boundary value must be >= 0")
    grid = FDGrid(L, 1999) if grid is None else grid
    if grid.L != L:
        raise InvalidParameterError("grid length does not match L")
    m, h = grid.m, grid.h
    tol = 1e-10 * (1.0 + n**q)
    v = np.empty(m + 2)
    v[0] = v[-1] = n
    if v_init is not None:
        v_init = np.asarray(v_init, dtype=float)
        v[1:-1] = v_init[1:-1] if len(v_init) == m + 2 else v_init
    else:
        v[1:-1] = 0.0 if n == 0 else min(n, solve_vn(n, L, q))
    np.maximum(v, 0.0, out=v)

    R = _residual(v, h, q)
    res = float(np.max(np.abs(R)))
    it = 0
    ab = np.zeros((3, m))
    while res > tol:
        if it >= max_iter:
            raise NumericalError(f"Newton did not converge after {max_iter} steps, residual {res:.3e}")
        it += 1
        inner = v[1:-1]
        ab[0, 1:] = 0.5 / h**2
        ab[1, :] = -1.0 / h**2 - q * inner ** (q - 1.0)
        ab[2, :-1] = 0.5 / h**2
        dv = solve_banded((1, 1), ab, -R)
        step = 1.0
        for _ in range(40):
            trial = v.copy()
            trial[1:-1] = np.maximum(inner + step * dv, 0.0)
            R_trial = _residual(trial, h, q)
            res_trial = float(np.max(np.abs(R_trial)))
            if res_trial < res or res_trial <= tol:
                break
            step *= 0.5
        else:
            raise NumericalError(f"line search stalled at residual {res:.3e}")
        v, R, res = trial, R_trial, res_trial
        # the problem is symmetric about L/2; remove round-off asymmetry
        v = 0.5 * (v + v[::-1])
        R = _residual(v, h, q)
        res = float(np.max(np.abs(R)))
    return FDSolution(grid, v, float(n), it, res)


def boundary_ladder_fd(
    q: float,
    L: float,
    n_list: Sequence[float],
    grid: Optional[FDGrid] = None,
) -> list:
    """Solve for increasing boundary values, warm-starting each rung from the last."""
    n_list = [float(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InvalidParameterError("boundary values must be increasing")
    grid = FDGrid(L, 1999) if grid is None else grid
    out = []
    prev = None
    for n in n_list:
        sol = fd_solve_1d(q, L, n, grid, v_init=None if prev is None else prev.values)
        out.append(sol)
        prev = sol
    return out


def residual_check(solution: FDSolution, q: float) -> float:
    """Max-norm residual recomputed from the stored nodal values alone."""
    v = solution.values
    h2 = solution.grid.h ** 2
    out = 0.0
    for i in range(1, len(v) - 1):
        r = 0.5 * (v[i - 1] - 2.0 * v[i] + v[i + 1]) / h2 - v[i] ** q
        out = max(out, abs(r))
    return float(out)
