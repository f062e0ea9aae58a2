"""Closed-form and quadrature oracles for the canonical driver ``-y^q``.

Two families of exact solutions are provided:

* the deterministic-horizon profiles, solutions of ``y' = y^q`` with
  terminal value ``k`` (truncated) or ``+inf`` (blow-up), together with
  the transform ``Theta(x) = eta x^(1-q)/(q-1)`` that linearises them;
* the one-dimensional exit profiles, solutions of ``v''/2 = v^q`` on
  ``(0, L)`` with boundary value ``n`` or ``+inf``, written through the
  half-width function

      bmx(v, v_l) = v_l^((1-q)/2) sqrt((q+1)/4) ∫_1^{v/v_l} (u^(q+1) - 1)^(-1/2) du.

The integral is evaluated on ``[1, 10]`` with ``u = 1 + s^2``, which turns
the inverse-square-root endpoint into a smooth integrand for fixed Gauss
panels, and beyond ``u = 10`` by a convergent power series.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidParameterError, NumericalError
from .model import conjugate_exponent

_SWITCH = 10.0
_PANELS = 12
_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(24)


def _check_q(q):
    conjugate_exponent(q)
    return float(q)


# deterministic horizon -------------------------------------------------------


def blowup_profile(q: float, T: float, t) -> np.ndarray:
    """``((q-1)(T-t))^(1-p)``: solution of ``y' = y^q`` exploding at ``T``."""
    p = conjugate_exponent(q)
    t = np.asarray(t, dtype=float)
    if np.any(t >= T):
        raise InvalidParameterError("blow-up profile needs t < T")
    out = ((q - 1.0) * (T - t)) ** (1.0 - p)
    return out if out.ndim else float(out)


def truncated_profile(q: float, T: float, k: float, t) -> np.ndarray:
    """Solution of ``y' = y^q`` with ``y_T = k``."""
    _check_q(q)
    if not k > 0:
        raise InvalidParameterError("k must be positive")
    t = np.asarray(t, dtype=float)
    if np.any(t > T):
        raise InvalidParameterError("truncated profile needs t <= T")
    out = (k ** (1.0 - q) + (q - 1.0) * (T - t)) ** (-1.0 / (q - 1.0))
    return out if out.ndim else float(out)


def theta(x, q: float, eta: float = 1.0):
    """``∫_x^∞ eta / y^q dy = eta x^(1-q) / (q-1)``."""
    _check_q(q)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or eta <= 0:
        raise InvalidParameterError("theta needs x > 0 and eta > 0")
    out = eta * x ** (1.0 - q) / (q - 1.0)
    return out if out.ndim else float(out)


def theta_inv(u, q: float, eta: float = 1.0):
    """Inverse of :func:`theta`."""
    _check_q(q)
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0) or eta <= 0:
        raise InvalidParameterError("theta_inv needs u > 0 and eta > 0")
    out = ((q - 1.0) * u / eta) ** (-1.0 / (q - 1.0))
    return out if out.ndim else float(out)


def keller_osserman_envelope(dist_value, C: float, q: float):
    """``C dist^(-2(p-1))``; the exponent equals ``2/(q-1)``."""
    p = conjugate_exponent(q)
    d = np.asarray(dist_value, dtype=float)
    if np.any(d <= 0):
        raise InvalidParameterError("distance must be positive")
    out = C * d ** (-2.0 * (p - 1.0))
    return out if out.ndim else float(out)


def boundary_blowup_constant(q: float) -> float:
    """``c`` in ``v(x) ~ c dist(x)^(-2/(q-1))`` for ``v''/2 = v^q`` near a blow-up boundary."""
    a = 2.0 / (_check_q(q) - 1.0)
    return (a * (a + 1.0) / 2.0) ** (1.0 / (q - 1.0))


# half-width integral ---------------------------------------------------------


def _head_integral(upper, m: float) -> np.ndarray:
    """``∫_1^upper (u^m - 1)^(-1/2) du`` for ``1 <= upper <= _SWITCH``."""
    s_max = np.sqrt(np.maximum(upper - 1.0, 0.0))
    edges = np.linspace(0.0, 1.0, _PANELS + 1)
    x = 0.5 * (edges[:-1, None] + edges[1:, None]) + 0.5 * (edges[1:, None] - edges[:-1, None]) * _NODES
    w = (0.5 * (edges[1:, None] - edges[:-1, None]) * _WEIGHTS).ravel()
    s = s_max[..., None] * x.ravel()
    with np.errstate(invalid="ignore", divide="ignore"):
        integrand = 2.0 * s / np.sqrt(np.expm1(m * np.log1p(s * s)))
    # the integrand tends to 2/sqrt(m) as s -> 0
    integrand = np.where(s > 0, integrand, 2.0 / np.sqrt(m))
    return s_max * (integrand @ w)


def _tail_integral(lower, m: float) -> np.ndarray:
    """``∫_lower^∞ (u^m - 1)^(-1/2) du`` for ``lower >= _SWITCH`` by binomial series."""
    lower = np.asarray(lower, dtype=float)
    total = np.zeros_like(lower)
    coef = 1.0
    inv = lower ** (-m)
    term_scale = lower ** (1.0 - 0.5 * m)
    for j in range(200):
        if j:
            coef *= (2 * j - 1) / (2 * j)
        a = m * (j + 0.5) - 1.0
        term = coef * term_scale / a
        total = total + term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
        term_scale = term_scale * inv
    return total


def _unit_integral(upper, m: float) -> np.ndarray:
    upper = np.asarray(upper, dtype=float)
    out = np.empty_like(upper)
    near = upper <= _SWITCH
    if near.any():
        out[near] = _head_integral(upper[near], m)
    far = ~near
    if far.any():
        head = _head_integral(np.array([_SWITCH]), m)[0]
        with np.errstate(divide="ignore"):
            out[far] = head + _tail_integral(_SWITCH, m) - _tail_integral(upper[far], m)
    return out


def unit_integral(q: float) -> float:
    """``∫_1^∞ (u^(q+1) - 1)^(-1/2) du`` by the quadrature used in :func:`bmx`."""
    m = _check_q(q) + 1.0
    return float(_head_integral(np.array([_SWITCH]), m)[0] + _tail_integral(_SWITCH, m))


def unit_integral_closed_form(q: float) -> float:
    """``∫_1^∞ (u^(q+1) - 1)^(-1/2) du = B(1/2 - 1/(q+1), 1/2) / (q+1)``.

    Independent of the quadrature; used to cross-check it.
    """
    from scipy.special import beta

    m = _check_q(q) + 1.0
    return float(beta(0.5 - 1.0 / m, 0.5) / m)


def _prefactor(v_l, q):
    return v_l ** ((1.0 - q) / 2.0) * np.sqrt((q + 1.0) / 4.0)


def bmx(v, v_l: float, q: float):
    """Half-width at which the exit profile with trough ``v_l`` reaches ``v``."""
    _check_q(q)
    if not v_l > 0:
        raise InvalidParameterError("v_l must be positive")
    v = np.asarray(v, dtype=float)
    if np.any(v < v_l):
        raise InvalidParameterError("bmx needs v >= v_l")
    out = _prefactor(v_l, q) * _unit_integral(v / v_l, q + 1.0)
    return out if out.ndim else float(out)


def bmL(v_l, q: float):
    """Half-width of the blow-up profile with trough ``v_l`` (``bmx`` at ``v = inf``)."""
    _check_q(q)
    v_l = np.asarray(v_l, dtype=float)
    if np.any(v_l <= 0):
        raise InvalidParameterError("v_l must be positive")
    out = _prefactor(v_l, q) * unit_integral(q)
    return out if out.ndim else float(out)


# root finds ------------------------------------------------------------------


def _bisect(fn, lo, hi, rel=4e-16, max_iter=400):
    """Root of a decreasing scalar ``fn`` on ``[lo, hi]`` with ``fn(lo) >= 0 >= fn(hi)``."""
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo <= rel * hi:
            break
        if fn(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_vstar(L: float, q: float) -> float:
    """Trough value of the profile blowing up at both ends of ``(0, L)``."""
    _check_q(q)
    if not L > 0:
        raise InvalidParameterError("L must be positive")
    target = L / 2.0

    def fn(v):
        return bmL(v, q) - target

    lo = hi = 1.0
    for _ in range(200):
        if fn(lo) >= 0:
            break
        lo /= 2.0
    else:
        raise NumericalError("could not bracket v* from below")
    for _ in range(200):
        if fn(hi) <= 0:
            break
        hi *= 2.0
    else:
        raise NumericalError("could not bracket v* from above")
    return _bisect(fn, lo, hi)


def solve_vn(n: float, L: float, q: float) -> float:
    """Trough value ``v_n`` of the profile equal to ``n`` at both ends of ``(0, L)``."""
    _check_q(q)
    if not n > 0:
        raise InvalidParameterError("boundary value n must be positive")
    if not L > 0:
        raise InvalidParameterError("L must be positive")
    target = L / 2.0
    v_star = solve_vstar(L, q)
    hi = min(float(n), v_star)

    def fn(v):
        return bmx(n, v, q) - target

    lo = hi
    for _ in range(400):
        lo /= 2.0
        if fn(lo) >= 0:
            break
    else:
        raise InvalidParameterError(f"no trough value v <= n={n} solves bmx(n, v) = L/2")
    return _bisect(fn, lo, hi)


@dataclass(frozen=True)
class ExitProfile:
    """Symmetric solution of ``v''/2 = v^q`` on ``(0, L)``.

    ``n`` is the boundary value, ``None`` for the blow-up profile.
    """

    q: float
    L: float
    v_l: float
    n: Optional[float] = None

    @property
    def kind(self) -> str:
        return "infinite" if self.n is None else "finite"

    @classmethod
    def finite(cls, n: float, L: float, q: float) -> "ExitProfile":
        return cls(float(q), float(L), solve_vn(n, L, q), float(n))

    @classmethod
    def infinite(cls, L: float, q: float) -> "ExitProfile":
        return cls(float(q), float(L), solve_vstar(L, q), None)

    @property
    def half_width(self) -> float:
        if self.n is None:
            return bmL(self.v_l, self.q)
        return bmx(self.n, self.v_l, self.q)


def profile_v(x, profile: ExitProfile):
    """Evaluate the exit profile at positions ``x`` by inverting ``bmx``."""
    x = np.asarray(x, dtype=float)
    d = np.abs(x - profile.L / 2.0)
    width = profile.half_width
    if np.any(d > width * (1.0 + 1e-12) + 1e-14):
        raise InvalidParameterError("position outside the profile's range")
    q, v_l = profile.q, profile.v_l
    flat = d.ravel()
    out = np.empty_like(flat)
    edge = flat >= width
    if profile.n is None:
        out[edge] = np.inf
    else:
        out[edge] = profile.n
    inner = ~edge
    target = flat[inner]
    lo = np.full(target.shape, v_l)
    if profile.n is None:
        hi = np.full(target.shape, 2.0 * v_l)
        for _ in range(2000):
            short = bmx(hi, v_l, q) < target
            if not short.any():
                break
            hi = np.where(short, 2.0 * hi, hi)
    else:
        hi = np.full(target.shape, float(profile.n))
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        live = (mid > lo) & (mid < hi)
        if not live.any():
            break
        below = bmx(mid, v_l, q) < target
        lo = np.where(live & below, mid, lo)
        hi = np.where(live & ~below, mid, hi)
    out[inner] = 0.5 * (lo + hi)
    out = out.reshape(d.shape)
    return out if out.ndim else float(out)
