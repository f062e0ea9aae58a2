"""Least-squares Monte Carlo for the backward equation on ``[0, S]``.

The sweep runs from the last grid step to time zero.  At step ``i`` every
still-active path carries ``V_{i+1}`` (its realised terminal payoff if it
exits at ``i+1``, otherwise the value computed one step later); the
conditional expectation given the state at ``t_i`` is a polynomial
regression over the active paths, followed by one driver step.

For the non-Markovian terminal values ``xi1``/``xi2`` the state includes
whether ``tau`` has already happened, so active paths are regressed in two
groups ("done" and "pending").  Pending paths also use the state of the
independent diffusion that defines ``tau`` when the bundle carries it.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidParameterError, NumericalError, RegressionDegeneracyError
from .forward import ExitInfo, PathBundle
from .model import Driver, TerminalSpec

_BASES = ("poly", "poly_invdist")
_SCHEMES = ("theta", "implicit")


@dataclass(frozen=True)
class RegressionConfig:
    """Conditional-expectation estimator and time-stepping options.

    ``basis`` is ``"poly"`` (monomials of total degree <= ``degree`` in the
    standardised state) or ``"poly_invdist"`` (the same plus powers of
    ``1/dist``).  ``scheme`` picks the driver step: ``"theta"`` integrates
    the ``-y^q/eta`` part exactly, ``"implicit"`` is a backward Euler step.
    ``on_degenerate="reduce"`` lowers the degree instead of raising when a
    group has fewer paths than basis functions.  ``invdist_floor`` bounds
    the distance feature below by that multiple of ``sqrt(dt)``.
    """

    degree: int = 3
    basis: str = "poly"
    ridge: float = 0.0
    estimate_z: bool = False
    scheme: str = "theta"
    on_degenerate: str = "raise"
    invdist_floor: float = 0.1

    def __post_init__(self):
        if self.degree < 0 or int(self.degree) != self.degree:
            raise InvalidParameterError("degree must be a non-negative integer")
        if self.basis not in _BASES:
            raise InvalidParameterError(f"basis must be one of {_BASES}")
        if self.ridge < 0:
            raise InvalidParameterError("ridge must be >= 0")
        if self.scheme not in _SCHEMES:
            raise InvalidParameterError(f"scheme must be one of {_SCHEMES}")
        if self.on_degenerate not in ("raise", "reduce"):
            raise InvalidParameterError("on_degenerate must be 'raise' or 'reduce'")
        if not self.invdist_floor >= 0:
            raise InvalidParameterError("invdist_floor must be >= 0")


# terminal data ---------------------------------------------------------------


def terminal_payoff(spec: TerminalSpec, exit_S: ExitInfo, exit_tau: Optional[ExitInfo] = None) -> float:
    """Realised truncated terminal value of one path (0 when ``S`` is censored)."""
    if spec.needs_tau and exit_tau is None:
        raise InvalidParameterError(f"{spec.kind} terminal value needs the second stopping time")
    if not exit_S.exited:
        return 0.0
    k = spec.k
    if spec.kind == "constant":
        return k
    if spec.kind == "markovian":
        return float(min(spec.g(np.asarray(exit_S.state)), k))
    tau_first = exit_tau.exited and exit_tau.index <= exit_S.index
    if spec.kind == "xi1":
        return k if tau_first else 0.0
    return 0.0 if tau_first else k


def terminal_payoffs(spec: TerminalSpec, bundle: PathBundle) -> np.ndarray:
    """Vectorised :func:`terminal_payoff` over a bundle."""
    ex = bundle.exit_S
    if spec.needs_tau and bundle.exit_tau is None:
        raise InvalidParameterError(f"{spec.kind} terminal value needs the second stopping time")
    if spec.kind == "constant":
        out = np.full(bundle.n_paths, spec.k)
    elif spec.kind == "markovian":
        out = np.zeros(bundle.n_paths)
        rows = np.nonzero(ex.exited)[0]
        if rows.size:
            g = np.asarray(spec.g(ex.state[rows]), dtype=float).reshape(-1)
            out[rows] = np.minimum(g, spec.k)
    else:
        tau_first = bundle.tau_before_S()
        hit = tau_first if spec.kind == "xi1" else ~tau_first
        out = np.where(hit, spec.k, 0.0)
    return np.where(ex.exited, out, 0.0)


# driver steps ----------------------------------------------------------------


def implicit_driver_step(c: float, driver: Driver, dt: float, t: float) -> float:
    """Solve ``y = c + dt f(t, y, 0)`` for ``y`` in ``[0, max(c, 0)]``.

    Safeguarded Newton with bisection fallback.  For the canonical driver
    this is ``y + dt y^q / eta = c``.
    """
    return float(_implicit_step(np.array([float(c)]), driver, dt, t)[0])


def _implicit_step(c, driver: Driver, dt: float, t: float, z=None) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if dt < 0:
        raise InvalidParameterError("dt must be >= 0")
    if dt == 0:
        return c.copy()

    def g(y):
        return y - c - dt * np.asarray(driver(t, y, z), dtype=float)

    lo = np.zeros_like(c)
    hi = np.maximum(c, 0.0)
    g_lo = g(lo)
    done = g_lo >= 0
    g_hi = g(hi)
    for _ in range(60):
        grow = (g_hi < 0) & ~done
        if not grow.any():
            break
        hi = np.where(grow, 2.0 * hi + 1.0, hi)
        g_hi = g(hi)
    y = np.where(done, 0.0, np.clip(c, lo, hi))
    tol = 1e-14 * (1.0 + np.abs(c))
    for _ in range(100):
        gy = g(y)
        conv = done | (np.abs(gy) <= tol) | (hi - lo <= 1e-15 * (1.0 + hi))
        if conv.all():
            return y
        lo = np.where(gy < 0, y, lo)
        hi = np.where(gy > 0, y, hi)
        h = 1e-7 * (1.0 + np.abs(y))
        slope = (g(y + h) - g(y - h)) / (2.0 * h)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = y - gy / slope
        ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
        y = np.where(conv, y, np.where(ok, newton, 0.5 * (lo + hi)))
    bad = int(np.nonzero(~conv)[0][0])
    raise NumericalError(f"implicit step did not converge for c={c[bad]}, dt={dt}, t={t}")


def theta_step(c, driver: Driver, dt: float, t: float, z=None) -> np.ndarray:
    """Exact flow of ``y' = y^q / eta(t)`` after an explicit step of the remainder.

    For the canonical driver the remainder vanishes and the step reproduces
    the scalar ODE solution exactly on ``y >= 0``.
    """
    c = np.maximum(np.asarray(c, dtype=float), 0.0)
    q = driver.q
    eta = driver.eta(t)
    stiff = c**q / eta
    remainder = np.asarray(driver(t, c, z), dtype=float) + stiff
    # cancellation noise of the two large terms is not a remainder
    remainder = np.where(np.abs(remainder) <= 64 * np.finfo(float).eps * stiff, 0.0, remainder)
    c = np.maximum(c + dt * remainder, 0.0)
    return c * (1.0 + (q - 1.0) * dt * c ** (q - 1.0) / eta) ** (-1.0 / (q - 1.0))


# regression ------------------------------------------------------------------


def _exponents(n_features: int, degree: int) -> np.ndarray:
    rows = [np.zeros(n_features, dtype=int)]
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(n_features), deg):
            e = np.zeros(n_features, dtype=int)
            for j in combo:
                e[j] += 1
            rows.append(e)
    return np.array(rows)


@dataclass(frozen=True)
class _Fit:
    beta: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    exponents: np.ndarray
    invdist_powers: int

    def design(self, feats: np.ndarray, invdist: Optional[np.ndarray]) -> np.ndarray:
        return _design(feats, invdist, self.mean, self.scale, self.exponents, self.invdist_powers)

    def predict(self, feats, invdist) -> np.ndarray:
        return self.design(feats, invdist) @ self.beta


def _design(feats, invdist, mean, scale, exponents, invdist_powers):
    u = (feats - mean[: feats.shape[1]]) / scale[: feats.shape[1]]
    cols = np.ones((len(u), len(exponents) + invdist_powers))
    for c, e in enumerate(exponents):
        for j in np.nonzero(e)[0]:
            cols[:, c] *= u[:, j] ** e[j]
    if invdist_powers:
        w = (invdist - mean[-1]) / scale[-1]
        for j in range(1, invdist_powers + 1):
            cols[:, len(exponents) + j - 1] = w**j
    return cols


def _fit(feats, invdist, target, reg: RegressionConfig, step: int) -> _Fit:
    m = len(target)
    all_feats = feats if invdist is None else np.column_stack([feats, invdist])
    mean = all_feats.mean(axis=0)
    scale = all_feats.std(axis=0)
    scale = np.where(scale > 1e-12 * (1.0 + np.abs(mean)), scale, 1.0)
    constant = np.all(np.ptp(all_feats, axis=0) == 0) if m else True
    degree = 0 if constant else reg.degree
    use_inv = invdist is not None and not constant
    while True:
        exps = _exponents(feats.shape[1], degree)
        n_inv = degree if use_inv else 0
        n_basis = len(exps) + n_inv
        if m >= n_basis:
            break
        if reg.on_degenerate == "raise" or degree == 0:
            raise RegressionDegeneracyError(step, m, n_basis)
        degree -= 1
    B = _design(feats, invdist, mean, scale, exps, n_inv)
    if reg.ridge > 0:
        B_aug = np.vstack([B, np.sqrt(reg.ridge) * np.eye(n_basis)])
        t_aug = np.concatenate([target, np.zeros(n_basis)])
        beta = np.linalg.lstsq(B_aug, t_aug, rcond=None)[0]
    else:
        beta = np.linalg.lstsq(B, target, rcond=None)[0]
    return _Fit(beta, mean, scale, exps, n_inv)


def _group_rows(bundle: PathBundle, spec: TerminalSpec, i: int, active: np.ndarray):
    """Split active paths into regression groups ``{name: (rows, use_tau_state)}``."""
    rows = np.nonzero(active)[0]
    if not spec.needs_tau:
        return {"all": (rows, False)}
    done = bundle.exit_tau.exited[rows] & (bundle.exit_tau.index[rows] <= i)
    return {
        "done": (rows[done], False),
        "pending": (rows[~done], bundle.tau_states is not None),
    }


def _features(bundle: PathBundle, i: int, rows, use_tau_state: bool, reg: RegressionConfig):
    feats = bundle.states[rows, i, :]
    if use_tau_state:
        feats = np.column_stack([feats, bundle.tau_states[rows, i, :]])
    invdist = None
    if reg.basis == "poly_invdist" and bundle.domain.bounded:
        dist = bundle.domain.signed_distance(bundle.states[rows, i, :])
        # the grid cannot resolve distances far below sqrt(dt); flooring
        # there keeps a few near-wall paths from dominating the fit
        floor = max(reg.invdist_floor * np.sqrt(bundle.grid.dt), 1e-12)
        invdist = 1.0 / np.maximum(dist, floor)
    return feats, invdist


def _brownian_increments(bundle: PathBundle, i: int, rows) -> np.ndarray:
    x0 = bundle.states[rows, i, :]
    x1 = bundle.states[rows, i + 1, :]
    dt = bundle.grid.dt
    resid = x1 - x0 - bundle.coeffs.b(x0) * dt
    sig = np.asarray(bundle.coeffs.sigma(x0), dtype=float)
    return np.einsum("mij,mj->mi", np.linalg.pinv(sig), resid)


def _driver_step(c, driver, reg, k, t, dt, z=None):
    c = np.clip(c, 0.0, k)
    if reg.scheme == "theta":
        y = theta_step(c, driver, dt, t, z)
    else:
        y = _implicit_step(c, driver, dt, t, z)
    return np.clip(y, 0.0, k)


# value field -----------------------------------------------------------------


@dataclass(frozen=True)
class ValueField:
    """Regression-estimated solution on the time grid of one bundle.

    ``fits[i]`` maps group names to the regression of ``V_{i+1}`` on the
    state at ``t_i``; :meth:`values_at` turns them back into ``Ŷ(t_i, ·)``.
    """

    y0: float
    y0_stderr: float
    fits: tuple
    z_fits: Optional[tuple]
    active_counts: np.ndarray
    spec: TerminalSpec
    driver: Driver
    reg: RegressionConfig
    payoff: np.ndarray
    step0_values: np.ndarray
    step0_slope: float

    @property
    def k(self) -> float:
        return self.spec.k

    def values_at(self, bundle: PathBundle, i: int) -> np.ndarray:
        """``Ŷ`` at step ``i`` for every path.

        Active paths get the regression value, paths exiting exactly at
        ``i`` their realised payoff, and already-exited paths ``nan``.
        """
        n = bundle.grid.n_steps
        idx = bundle.exit_S.index
        out = np.full(bundle.n_paths, np.nan)
        out[idx == i] = self.payoff[idx == i]
        if i == n:
            out[idx > n] = 0.0
            return out
        dt = bundle.grid.dt
        for name, (rows, use_tau) in _group_rows(bundle, self.spec, i, idx > i).items():
            if rows.size == 0:
                continue
            feats, invdist = _features(bundle, i, rows, use_tau, self.reg)
            c = self.fits[i][name].predict(feats, invdist)
            z = None
            if self.z_fits is not None:
                z = np.column_stack([f.predict(feats, invdist) for f in self.z_fits[i][name]])
            out[rows] = _driver_step(c, self.driver, self.reg, self.k, i * dt, dt, z)
        return out

    def z_at(self, bundle: PathBundle, i: int) -> np.ndarray:
        """``Ẑ`` at step ``i`` for active paths (``nan`` elsewhere)."""
        if self.z_fits is None:
            raise InvalidParameterError("field was computed without Z estimation")
        out = np.full((bundle.n_paths, bundle.dimension), np.nan)
        if i >= bundle.grid.n_steps:
            return out
        groups = _group_rows(bundle, self.spec, i, bundle.exit_S.index > i)
        for name, (rows, use_tau) in groups.items():
            if rows.size == 0:
                continue
            feats, invdist = _features(bundle, i, rows, use_tau, self.reg)
            out[rows] = np.column_stack([f.predict(feats, invdist) for f in self.z_fits[i][name]])
        return out


def lsmc_solve(
    bundle: PathBundle,
    driver: Driver,
    spec: TerminalSpec,
    reg: RegressionConfig = RegressionConfig(),
) -> ValueField:
    """Backward regression sweep for terminal value ``spec`` at the exit time ``S``."""
    if driver.q <= 1:
        raise InvalidParameterError("driver exponent must exceed 1")
    n = bundle.grid.n_steps
    dt = bundle.grid.dt
    idx = bundle.exit_S.index
    payoff = terminal_payoffs(spec, bundle)
    k = spec.k
    V = np.zeros(bundle.n_paths)
    fits = [None] * n
    z_fits = [None] * n if reg.estimate_z else None
    counts = np.zeros(n + 1, dtype=np.int64)
    counts[n] = int(np.sum(idx > n))
    step0_values = None
    for i in range(n - 1, -1, -1):
        active = idx > i
        counts[i] = int(active.sum())
        nxt = np.where(idx == i + 1, payoff, V)
        groups = _group_rows(bundle, spec, i, active)
        step_fits = {}
        step_z = {} if reg.estimate_z else None
        V_new = np.zeros(bundle.n_paths)
        for name, (rows, use_tau) in groups.items():
            if rows.size == 0:
                continue
            feats, invdist = _features(bundle, i, rows, use_tau, reg)
            target = nxt[rows]
            fit = _fit(feats, invdist, target, reg, i)
            step_fits[name] = fit
            c = fit.predict(feats, invdist)
            z = None
            if reg.estimate_z:
                # centring by the continuation value keeps the conditional
                # mean and removes most of the variance
                dW = _brownian_increments(bundle, i, rows)
                centred = target - c
                zf = [_fit(feats, invdist, centred * dW[:, j] / dt, reg, i)
                      for j in range(bundle.dimension)]
                step_z[name] = zf
                z = np.column_stack([f.predict(feats, invdist) for f in zf])
            V_new[rows] = _driver_step(c, driver, reg, k, i * dt, dt, z)
        fits[i] = step_fits
        if z_fits is not None:
            z_fits[i] = step_z
        if i == 0:
            step0_values = nxt[active].copy()
        V = V_new
    active0 = idx > 0
    y0 = float(V[active0].mean())
    # delta method through the first driver step
    m0 = float(step0_values.mean())
    lo, hi = max(m0 - 1e-6 * (1.0 + m0), 0.0), m0 + 1e-6 * (1.0 + m0)
    y_lo, y_hi = _driver_step(np.array([lo, hi]), driver, reg, k, 0.0, dt)
    slope = float((y_hi - y_lo) / (hi - lo))
    n0 = len(step0_values)
    if n0 < 2:
        stderr = 0.0
    elif bundle.x0_shared:
        stderr = abs(slope) * float(step0_values.std(ddof=1) / np.sqrt(n0))
    else:
        stderr = float(V[active0].std(ddof=1) / np.sqrt(n0))
    return ValueField(
        y0=max(y0, 0.0),
        y0_stderr=stderr,
        fits=tuple(fits),
        z_fits=None if z_fits is None else tuple(z_fits),
        active_counts=counts,
        spec=spec,
        driver=driver,
        reg=reg,
        payoff=payoff,
        step0_values=step0_values,
        step0_slope=slope,
    )


@dataclass(frozen=True)
class LadderResult:
    k_list: tuple
    fields: tuple
    y0_sequence: np.ndarray
    stderr: np.ndarray
    increments: np.ndarray
    increment_stderr: np.ndarray
    monotone_violation: float

    @property
    def monotone_ok(self) -> bool:
        """Every increment exceeds ``-3`` paired standard errors."""
        return bool(np.all(self.increments >= -3.0 * self.increment_stderr - 1e-12))


def truncation_ladder(
    bundle: PathBundle,
    driver: Driver,
    spec_family: Callable[[float], TerminalSpec],
    k_list: Sequence[float],
    reg: RegressionConfig = RegressionConfig(),
) -> LadderResult:
    """Solve for every truncation level on one bundle (common random numbers)."""
    k_list = tuple(float(k) for k in k_list)
    if len(k_list) < 2:
        raise InvalidParameterError("a ladder needs at least two truncation levels")
    if any(b < a for a, b in zip(k_list, k_list[1:])):
        raise InvalidParameterError("truncation levels must be non-decreasing")
    fields = tuple(lsmc_solve(bundle, driver, spec_family(k), reg) for k in k_list)
    y0 = np.array([f.y0 for f in fields])
    se = np.array([f.y0_stderr for f in fields])
    inc = np.diff(y0)
    inc_se = np.array([_paired_stderr(a, b) for a, b in zip(fields, fields[1:])])
    return LadderResult(k_list, fields, y0, se, inc, inc_se, float(inc.min()))


def _paired_stderr(a: ValueField, b: ValueField) -> float:
    da = a.step0_slope * a.step0_values
    db = b.step0_slope * b.step0_values
    if len(da) != len(db) or len(da) < 2:
        return float(np.hypot(a.y0_stderr, b.y0_stderr))
    return float(np.std(db - da, ddof=1) / np.sqrt(len(da)))
