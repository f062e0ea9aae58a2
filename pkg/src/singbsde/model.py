"""Shared domain types: drivers, domains, forward coefficients, terminal data.

All types are frozen dataclasses and safe to share between threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidParameterError


def conjugate_exponent(q: float) -> float:
    """Hölder conjugate ``p = q / (q - 1)`` of an exponent ``q > 1``."""
    q = float(q)
    if not q > 1.0:
        raise InvalidParameterError(f"q must exceed 1, got {q}")
    return q / (q - 1.0)


def _as_eta(eta) -> Callable[[float], float]:
    if callable(eta):
        return eta
    value = float(eta)
    if not value > 0:
        raise InvalidParameterError(f"eta must be positive, got {value}")
    return lambda t: value


@dataclass(frozen=True)
class Driver:
    """Generator ``f(t, y, z)`` of the backward equation.

    ``eval`` must accept a time, an array of ``y`` values and an array of
    ``z`` values (or ``None`` for z-independent drivers) and broadcast.
    ``eta`` is a deterministic positive function of time.
    """

    q: float
    eta: Callable[[float], float]
    eval: Callable
    chi: float = 0.0
    l_z: float = 0.0
    eta_max: Optional[float] = None

    def __post_init__(self):
        conjugate_exponent(self.q)
        object.__setattr__(self, "eta", _as_eta(self.eta))

    @property
    def p(self) -> float:
        return conjugate_exponent(self.q)

    def __call__(self, t, y, z=None):
        return self.eval(t, y, z)


def canonical_driver(q: float, eta=1.0) -> Driver:
    """The driver ``f(t, y) = -y |y|^(q-1) / eta(t)``."""
    eta_fn = _as_eta(eta)

    def f(t, y, z=None):
        y = np.asarray(y, dtype=float)
        return -y * np.abs(y) ** (q - 1.0) / eta_fn(t)

    eta_max = None if callable(eta) else float(eta)
    return Driver(q=q, eta=eta_fn, eval=f, chi=0.0, l_z=0.0, eta_max=eta_max)


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    passed: bool
    worst_excess: float
    worst_sample: Optional[tuple] = None
    informational: bool = False


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if not c.informational)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self):
        return [c for c in self.checks if not c.passed and not c.informational]


def validate_driver(
    driver: Driver,
    t_grid,
    y_max: float = 10.0,
    n_y: int = 41,
    z_samples=None,
    eta_max: Optional[float] = None,
    rtol: float = 1e-10,
) -> ValidationReport:
    """Spot-check the structural conditions on a sampled grid.

    Checks positivity and boundedness of ``eta``, the superlinear decay
    ``f(t,y,z) <= -y^q/eta(t) + f(t,0,z)`` for ``y >= 0``, one-sided
    monotonicity with constant ``chi`` and the Lipschitz bound in ``z``.
    Failures are reported, never raised.
    """
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    ys = np.linspace(0.0, y_max, n_y)
    if z_samples is None:
        z_samples = np.zeros((1, 1))
    z_samples = np.atleast_2d(np.asarray(z_samples, dtype=float))
    eta_max = driver.eta_max if eta_max is None else eta_max
    q = driver.q
    checks = []

    etas = np.array([driver.eta(t) for t in t_grid], dtype=float)
    bad = etas <= 0
    if eta_max is not None:
        bad |= etas > eta_max * (1 + rtol)
    worst = int(np.argmax(np.where(bad, 1.0, 0.0))) if bad.any() else None
    checks.append(
        ConditionCheck(
            "eta_bounds",
            not bad.any(),
            float(np.max(etas) - (eta_max if eta_max is not None else np.inf)),
            None if worst is None else (float(t_grid[worst]),),
        )
    )

    def excess_record(name, excess, samples):
        i = int(np.argmax(excess))
        return ConditionCheck(name, bool(excess[i] <= 0), float(excess[i]), samples[i])

    # B1: superlinear decay
    excess, samples = [], []
    for t, eta_t in zip(t_grid, etas):
        for z in z_samples:
            f0 = float(driver(t, 0.0, z))
            fy = np.asarray(driver(t, ys, z), dtype=float)
            bound = -(ys**q) / eta_t + f0
            scale = 1.0 + np.abs(bound) + np.abs(fy)
            excess.extend(fy - bound - rtol * scale)
            samples.extend((float(t), float(y), tuple(z)) for y in ys)
    checks.append(excess_record("B1", np.asarray(excess), samples))

    # A1: (f(y) - f(y'))(y - y') <= chi (y - y')^2
    yy = np.linspace(-y_max, y_max, n_y)
    y1, y2 = np.meshgrid(yy, yy, indexing="ij")
    mask = y1 != y2
    y1, y2 = y1[mask], y2[mask]
    excess, samples = [], []
    for t in t_grid:
        for z in z_samples:
            f1 = np.asarray(driver(t, y1, z), dtype=float)
            f2 = np.asarray(driver(t, y2, z), dtype=float)
            lhs = (f1 - f2) * (y1 - y2)
            rhs = driver.chi * (y1 - y2) ** 2
            excess.extend(lhs - rhs - rtol * (1 + np.abs(lhs)))
            samples.extend((float(t), float(a), float(b)) for a, b in zip(y1, y2))
    checks.append(excess_record("A1", np.asarray(excess), samples))

    # A4: Lipschitz in z
    if len(z_samples) >= 2:
        excess, samples = [], []
        for t in t_grid:
            for i in range(len(z_samples)):
                for j in range(i + 1, len(z_samples)):
                    za, zb = z_samples[i], z_samples[j]
                    diff = np.abs(
                        np.asarray(driver(t, ys, za)) - np.asarray(driver(t, ys, zb))
                    )
                    lip = driver.l_z * np.linalg.norm(za - zb)
                    excess.extend(diff - lip - rtol * (1 + diff))
                    samples.extend((float(t), float(y), i, j) for y in ys)
        checks.append(excess_record("A4", np.asarray(excess), samples))

    # B3/B4 constants are only explicit for chi == 0
    checks.append(
        ConditionCheck("B3_B4", True, 0.0, None, informational=True)
    )
    return ValidationReport(tuple(checks))


_KINDS = ("interval", "ball", "box", "whole")


@dataclass(frozen=True)
class Domain:
    """Bounded open set with closed-form signed distance.

    Use the constructors :meth:`interval`, :meth:`ball`, :meth:`box` or
    :meth:`whole_space`.  The whole-space domain has no boundary: its
    distance is ``+inf`` and paths in it never leave.
    """

    kind: str
    dimension: int
    lo: tuple = ()
    hi: tuple = ()
    center: tuple = ()
    radius: float = 0.0

    @classmethod
    def interval(cls, a: float, b: float) -> "Domain":
        if not b > a:
            raise InvalidParameterError(f"empty interval ({a}, {b})")
        return cls("interval", 1, lo=(float(a),), hi=(float(b),))

    @classmethod
    def ball(cls, center, radius: float) -> "Domain":
        center = tuple(float(c) for c in np.atleast_1d(center))
        if not radius > 0:
            raise InvalidParameterError("ball radius must be positive")
        return cls("ball", len(center), center=center, radius=float(radius))

    @classmethod
    def box(cls, lo, hi) -> "Domain":
        lo = tuple(float(v) for v in np.atleast_1d(lo))
        hi = tuple(float(v) for v in np.atleast_1d(hi))
        if len(lo) != len(hi) or not all(b > a for a, b in zip(lo, hi)):
            raise InvalidParameterError("box needs lo < hi componentwise")
        return cls("box", len(lo), lo=lo, hi=hi)

    @classmethod
    def whole_space(cls, dimension: int = 1) -> "Domain":
        return cls("whole", int(dimension))

    @property
    def bounded(self) -> bool:
        return self.kind != "whole"

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        if self.dimension == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        if x.shape[-1] != self.dimension:
            raise InvalidParameterError(
                f"point dimension {x.shape[-1]} != domain dimension {self.dimension}"
            )
        return x

    def signed_distance(self, x) -> np.ndarray:
        """Positive inside, zero on the boundary, negative outside.

        ``x`` has shape ``(..., d)``; for one-dimensional domains a bare
        array of coordinates is accepted as well.
        """
        x = self._points(x)
        if self.kind == "whole":
            return np.full(x.shape[:-1], np.inf)
        if self.kind == "ball":
            c = np.asarray(self.center)
            return self.radius - np.linalg.norm(x - c, axis=-1)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        inner = np.minimum(x - lo, hi - x)
        inside = np.min(inner, axis=-1)
        gap = np.maximum(np.maximum(lo - x, x - hi), 0.0)
        outside = -np.linalg.norm(gap, axis=-1)
        return np.where(inside >= 0, inside, outside)

    def project(self, x) -> np.ndarray:
        """Nearest boundary point, shape ``(..., d)``."""
        x = self._points(x).copy()
        if self.kind == "whole":
            return x
        if self.kind == "ball":
            c = np.asarray(self.center)
            v = (x - c).reshape(-1, self.dimension)
            r = np.linalg.norm(v, axis=1)
            v[r == 0, 0] = 1.0
            r[r == 0] = 1.0
            return (c + self.radius * v / r[:, None]).reshape(x.shape)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        flat = np.clip(x.reshape(-1, self.dimension), lo, hi)
        interior = np.all((flat > lo) & (flat < hi), axis=1)
        if interior.any():
            pts = flat[interior]
            gaps = np.concatenate([pts - lo, hi - pts], axis=1)
            face = np.argmin(gaps, axis=1)
            axis = face % self.dimension
            rows = np.arange(len(pts))
            pts[rows, axis] = np.where(face < self.dimension, lo[axis], hi[axis])
            flat[interior] = pts
        return flat.reshape(x.shape)

    def contains(self, x) -> np.ndarray:
        return self.signed_distance(x) > 0


@dataclass(frozen=True)
class SDECoefficients:
    """Drift and diffusion of the forward diffusion.

    ``b(x)`` maps ``(n, d) -> (n, d)``; ``sigma(x)`` maps ``(n, d) -> (n, d, d)``.
    """

    b: Callable
    sigma: Callable
    lipschitz_bound: float
    dimension: int = 1

    def check_lipschitz(self, points, n_pairs: int = 200, seed: int = 0) -> float:
        """Largest sampled difference quotient; compare with ``lipschitz_bound``."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dimension)
        rng = np.random.default_rng(seed)
        i = rng.integers(len(pts), size=n_pairs)
        j = rng.integers(len(pts), size=n_pairs)
        keep = np.linalg.norm(pts[i] - pts[j], axis=1) > 0
        a, c = pts[i[keep]], pts[j[keep]]
        db = np.linalg.norm(self.b(a) - self.b(c), axis=1)
        ds = np.linalg.norm(self.sigma(a) - self.sigma(c), axis=(1, 2))
        quot = (db + ds) / np.linalg.norm(a - c, axis=1)
        return float(quot.max()) if quot.size else 0.0


def brownian(dimension: int = 1, drift=0.0, sigma=1.0) -> SDECoefficients:
    """Constant-coefficient diffusion ``dX = drift dt + sigma dW``."""
    drift = np.broadcast_to(np.asarray(drift, dtype=float), (dimension,)).copy()
    sig = np.asarray(sigma, dtype=float)
    if sig.ndim < 2:
        sig = np.eye(dimension) * sig
    sig = sig.copy()

    def b(x):
        return np.broadcast_to(drift, np.shape(x)).copy()

    def s(x):
        n = np.shape(x)[0]
        return np.broadcast_to(sig, (n, dimension, dimension))

    return SDECoefficients(b=b, sigma=s, lipschitz_bound=0.0, dimension=dimension)


_TERMINAL_KINDS = ("constant", "markovian", "xi1", "xi2")


@dataclass(frozen=True)
class TerminalSpec:
    """Truncated terminal value ``xi ∧ k``.

    ``constant``: k.  ``markovian``: ``min(g(exit state), k)``.
    ``xi1``: ``k 1{tau <= S}``.  ``xi2``: ``k 1{tau > S}``.
    """

    kind: str
    k: float
    g: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in _TERMINAL_KINDS:
            raise InvalidParameterError(f"unknown terminal kind {self.kind!r}")
        if not (np.isfinite(self.k) and self.k >= 0):
            raise InvalidParameterError(f"truncation level must be finite and >= 0, got {self.k}")
        if self.kind == "markovian" and self.g is None:
            raise InvalidParameterError("markovian terminal needs g")

    @classmethod
    def constant(cls, k):
        return cls("constant", float(k))

    @classmethod
    def markovian(cls, g, k):
        return cls("markovian", float(k), g)

    @classmethod
    def xi1(cls, k):
        return cls("xi1", float(k))

    @classmethod
    def xi2(cls, k):
        return cls("xi2", float(k))

    @property
    def needs_tau(self) -> bool:
        return self.kind in ("xi1", "xi2")

    def with_k(self, k) -> "TerminalSpec":
        return TerminalSpec(self.kind, float(k), self.g)
