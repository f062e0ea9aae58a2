"""Statistical checks run on a solved field and its path bundle.

Every function here is a pure function of its inputs: no random numbers
are drawn, and reductions run in a fixed order, so repeated calls are
bit-identical.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .backward import ValueField
from .errors import InvalidParameterError, UndefinedEstimateError
from .forward import PathBundle, approach_indices
from .model import conjugate_exponent

MIN_SAMPLES = 30

EVENTS = ("tau<=S", "tau>S")


def _event_mask(bundle: PathBundle, event: str) -> np.ndarray:
    if event not in EVENTS:
        raise InvalidParameterError(f"event must be one of {EVENTS}, got {event!r}")
    before = bundle.tau_before_S()
    return before if event == "tau<=S" else ~before


# continuity ------------------------------------------------------------------


@dataclass(frozen=True)
class ContinuityCurve:
    """Mean of ``Ŷ_t`` over paths still running at ``t`` inside ``event``.

    ``low_sample[j]`` marks points averaged over fewer than ``MIN_SAMPLES``
    paths; their mean is ``nan`` when no path contributes.
    """

    times: np.ndarray
    conditional_mean: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    low_sample: np.ndarray
    event: str
    clock: str = "calendar"

    def __len__(self):
        return len(self.times)

    @property
    def reliable(self) -> np.ndarray:
        return np.nonzero(~self.low_sample)[0]

    @property
    def defined(self) -> bool:
        return self.reliable.size > 0

    def initial(self) -> float:
        if not self.defined:
            raise UndefinedEstimateError("curve has no point with enough samples")
        return float(self.conditional_mean[self.reliable[0]])

    def final(self) -> float:
        if not self.defined:
            raise UndefinedEstimateError("curve has no point with enough samples")
        return float(self.conditional_mean[self.reliable[-1]])

    def final_stderr(self) -> float:
        return float(self.stderr[self.reliable[-1]])

    def decay_ratio(self) -> float:
        """``final / initial`` over the reliable points."""
        first = self.initial()
        return self.final() / first if first > 0 else 0.0


def _summaries(values_by_point):
    means, ses, counts = [], [], []
    for v in values_by_point:
        n = len(v)
        counts.append(n)
        means.append(float(v.mean()) if n else np.nan)
        ses.append(float(v.std(ddof=1) / np.sqrt(n)) if n > 1 else np.nan)
    return np.array(means), np.array(ses), np.array(counts, dtype=np.int64)


def continuity_curve(
    field: ValueField,
    bundle: PathBundle,
    event: str,
    stride: int = 1,
    clock: str = "calendar",
    n_points: int = 50,
) -> ContinuityCurve:
    """Decay profile of ``Ŷ`` on ``event`` as the terminal time is approached.

    With ``clock="calendar"`` the points are grid times ``t_i`` (every
    ``stride``-th step) and each averages ``Ŷ(t_i)`` over event paths with
    ``t_i < S``.  With ``clock="exit_lag"`` the points are lags ``S - t``
    on a grid of ``n_points`` step counts from ``n_steps/2`` down to 1, so
    every path contributes at its own distance to ``S``; times are then
    reported as negative lags so that they still increase.
    """
    if bundle.exit_tau is None:
        raise InvalidParameterError("continuity_curve needs a bundle with exit_tau")
    if not field.spec.needs_tau:
        raise InvalidParameterError("continuity_curve needs a xi1 or xi2 field")
    if stride < 1:
        raise InvalidParameterError("stride must be >= 1")
    mask = _event_mask(bundle, event)
    n = bundle.grid.n_steps
    idx = bundle.exit_S.index
    dt = bundle.grid.dt
    if clock == "calendar":
        steps = np.arange(0, n, stride)
        samples = []
        for i in steps:
            rows = mask & (idx > i)
            if rows.any():
                samples.append(field.values_at(bundle, int(i))[rows])
            else:
                samples.append(np.empty(0))
        times = steps * dt
    elif clock == "exit_lag":
        lags = np.unique(np.geomspace(max(n // 2, 1), 1, n_points).astype(np.int64))[::-1]
        fin = np.nonzero(mask & (idx <= n))[0]
        order = np.argsort(idx[fin], kind="stable")
        exits, starts = np.unique(idx[fin][order], return_index=True)
        by_exit = dict(zip(exits.tolist(), np.split(fin[order], starts[1:])))
        parts = [[] for _ in lags]
        for i in range(n):
            hit = [(j, by_exit[i + int(lag)]) for j, lag in enumerate(lags) if i + int(lag) in by_exit]
            if not hit:
                continue
            y = field.values_at(bundle, i)
            for j, rows in hit:
                parts[j].append(y[rows])
        samples = [np.concatenate(ps) if ps else np.empty(0) for ps in parts]
        times = -lags * dt
    else:
        raise InvalidParameterError(f"unknown clock {clock!r}")
    means, ses, counts = _summaries(samples)
    means = np.where(np.isnan(means), means, np.maximum(means, 0.0))
    return ContinuityCurve(np.asarray(times, dtype=float), means, ses, counts,
                           counts < MIN_SAMPLES, event, clock)


# moment condition --------------------------------------------------------------


@dataclass(frozen=True)
class MomentReport:
    estimate: float
    trimmed_estimate: float
    relative_change: float
    divergence_suspect: bool
    n_event: int
    n_trimmed: int
    max_sample: float


def moment_estimate_xi1(
    bundle: PathBundle,
    q: float,
    varrho: float,
    C_fit: float,
    trim_fraction: float = 1e-3,
    threshold: float = 0.25,
) -> MomentReport:
    """Mean of ``1{tau<=S} (C_fit dist(X_tau)^(-2(p-1)))^varrho`` with a tail check.

    The estimate is recomputed after dropping the largest ``trim_fraction``
    of the event samples (at least one); a relative change above
    ``threshold`` raises the divergence flag.  The mean is over all paths,
    so paths outside the event contribute zero.
    """
    p = conjugate_exponent(q)
    if not varrho > 1:
        raise InvalidParameterError("varrho must exceed 1")
    if not C_fit > 0:
        raise InvalidParameterError("C_fit must be positive")
    if not bundle.domain.bounded:
        raise InvalidParameterError("moment estimate needs a bounded domain")
    mask = bundle.tau_before_S()
    rows = np.nonzero(mask)[0]
    if rows.size == 0:
        raise UndefinedEstimateError("no path with tau <= S")
    n = bundle.grid.n_steps
    at = np.minimum(bundle.exit_tau.index[rows], n)
    x = bundle.states[rows, at, :]
    dist = bundle.domain.signed_distance(x)
    # a grid tie can put X outside at the tau index; use the step before
    outside = dist <= 0
    if outside.any():
        back = np.maximum(at[outside] - 1, 0)
        dist[outside] = bundle.domain.signed_distance(bundle.states[rows[outside], back, :])
    dist = np.maximum(dist, np.finfo(float).tiny)
    samples = (C_fit * dist ** (-2.0 * (p - 1.0))) ** varrho
    total = bundle.n_paths
    estimate = float(np.sort(samples).sum() / total)
    n_trim = max(1, int(np.floor(trim_fraction * rows.size)))
    kept = np.sort(samples)[:-n_trim]
    trimmed = float(kept.sum() / (total - n_trim))
    change = abs(estimate - trimmed) / estimate if estimate > 0 else 0.0
    return MomentReport(estimate, trimmed, float(change), bool(change > threshold),
                        int(rows.size), n_trim, float(samples.max()))


# Keller-Osserman envelope --------------------------------------------------------


@dataclass(frozen=True)
class KOFit:
    C_hat: float
    path: int
    step: int
    time: float
    dist: float
    value: float


def _ko_scan(values_fn, states_fn, bundle, exponent, max_dist, steps):
    best = (-np.inf, -1, -1, np.nan, np.nan)
    for i in steps:
        y = values_fn(i)
        if y is None:
            continue
        d = bundle.domain.signed_distance(states_fn(i))
        ok = np.isfinite(y) & (d > 0)
        if max_dist is not None:
            ok &= d <= max_dist
        if not ok.any():
            continue
        score = np.where(ok, y * np.where(ok, d, 1.0) ** exponent, -np.inf)
        j = int(np.argmax(score))
        if score[j] > best[0]:
            best = (float(score[j]), j, int(i), float(d[j]), float(y[j]))
    return best


def ko_bound_fit(
    field: ValueField,
    bundle: PathBundle,
    q: float,
    max_dist: Optional[float] = None,
    stride: int = 1,
    min_active: Optional[int] = None,
) -> KOFit:
    """``max Ŷ dist^(2(p-1))`` over active (path, step) pairs, with its location.

    Steps with fewer than ``min_active`` running paths (default 5% of the
    bundle) are skipped: their regressions rest on a handful of late paths
    and say nothing about the envelope.  ``max_dist`` restricts the scan to
    points within that distance of the boundary, which isolates the
    boundary asymptotics from the interior.
    """
    if not bundle.domain.bounded:
        raise InvalidParameterError("ko_bound_fit needs a bounded domain")
    if field.spec.needs_tau:
        raise InvalidParameterError("ko_bound_fit needs a constant or markovian field")
    p = conjugate_exponent(q)
    idx = bundle.exit_S.index
    if min_active is None:
        min_active = max(MIN_SAMPLES, bundle.n_paths // 20)
    counts = field.active_counts
    steps = [i for i in range(0, bundle.grid.n_steps, stride) if counts[i] >= min_active]

    def values(i):
        y = field.values_at(bundle, i)
        y[idx <= i] = np.nan
        return y

    best = _ko_scan(values, lambda i: bundle.states[:, i, :], bundle, 2.0 * (p - 1.0), max_dist, steps)
    if best[1] < 0:
        raise UndefinedEstimateError("no active point inside the distance window")
    return KOFit(best[0], best[1], best[2], best[2] * bundle.grid.dt, best[3], best[4])


def ko_fit_profile(x, values, domain, q: float, max_dist: Optional[float] = None) -> float:
    """The same maximum for a deterministic profile sampled at positions ``x``."""
    p = conjugate_exponent(q)
    x = np.asarray(x, dtype=float)
    v = np.asarray(values, dtype=float)
    d = domain.signed_distance(x.reshape(-1, 1) if x.ndim == 1 else x)
    ok = np.isfinite(v) & (d > 0)
    if max_dist is not None:
        ok &= d <= max_dist
    if not ok.any():
        raise UndefinedEstimateError("no point inside the distance window")
    return float(np.max(v[ok] * d[ok] ** (2.0 * (p - 1.0))))


# boundedness before the approach times ----------------------------------------------


@dataclass(frozen=True)
class BoundedRow:
    n: float
    max_value: float
    envelope: float
    n_points: int
    violated: bool

    @property
    def vacuous(self) -> bool:
        return self.n_points == 0


def bounded_before_Sn(
    field: ValueField,
    bundle: PathBundle,
    n_list: Sequence[float],
    C_hat: float,
    q: float,
    tol: float = 0.05,
) -> list:
    """Largest ``Ŷ_t`` over ``t < S_n`` for each ``n``, against ``C_hat n^(2(p-1))``.

    An empty window (``S_n = 0``) reports ``max_value = nan`` and never
    counts as a violation.
    """
    p = conjugate_exponent(q)
    if not bundle.domain.bounded:
        raise InvalidParameterError("approach times need a bounded domain")
    n_list = [float(n) for n in n_list]
    limits = [approach_indices(bundle, n) for n in n_list]
    last = max(int(lim.max()) for lim in limits) if limits else 0
    running = [np.full(bundle.n_paths, -np.inf) for _ in n_list]
    points = [0] * len(n_list)
    for i in range(min(last, bundle.grid.n_steps)):
        y = None
        for j, lim in enumerate(limits):
            inside = lim > i
            if not inside.any():
                continue
            if y is None:
                y = field.values_at(bundle, i)
            vals = np.where(inside & np.isfinite(y), y, -np.inf)
            np.maximum(running[j], vals, out=running[j])
            points[j] += int(np.sum(inside))
    out = []
    for n, best, count in zip(n_list, running, points):
        m = float(best.max()) if count else np.nan
        env = C_hat * n ** (2.0 * (p - 1.0))
        out.append(BoundedRow(n, m, env, count, bool(count and m > env * (1.0 + tol))))
    return out


# weighted Z integral ---------------------------------------------------------------


@dataclass(frozen=True)
class ZIntegral:
    value: float
    stderr: float


def weighted_z_integral(field: ValueField, bundle: PathBundle, q: float, eps: float) -> ZIntegral:
    """Monte Carlo estimate of ``E ∫_0^S |Ẑ|^2 dist^(4(p-1)+eps) dt``."""
    if field.z_fits is None:
        raise InvalidParameterError("weighted_z_integral needs a field with Z estimates")
    if not eps > 1:
        raise InvalidParameterError("eps must exceed 1")
    p = conjugate_exponent(q)
    power = 4.0 * (p - 1.0) + eps
    n, dt = bundle.grid.n_steps, bundle.grid.dt
    idx = bundle.exit_S.index
    per_path = np.zeros(bundle.n_paths)
    for i in range(min(int(idx.max()), n)):
        active = idx > i
        if not active.any():
            break
        z = field.z_at(bundle, i)
        if bundle.domain.bounded:
            w = np.maximum(bundle.domain.signed_distance(bundle.states[:, i, :]), 0.0) ** power
        else:
            w = np.ones(bundle.n_paths)
        contrib = np.where(active, np.sum(np.nan_to_num(z) ** 2, axis=1) * w, 0.0)
        per_path += contrib * dt
    se = float(per_path.std(ddof=1) / np.sqrt(len(per_path))) if len(per_path) > 1 else 0.0
    return ZIntegral(float(per_path.mean()), se)


@dataclass(frozen=True)
class TrendReport:
    values: np.ndarray
    stderr: np.ndarray
    growth: float
    growth_stderr: float
    trend_detected: bool
    notes: list = field(default_factory=list)


def ladder_trend(values: Sequence[float], stderr: Sequence[float], n_se: float = 3.0) -> TrendReport:
    """Flag monotone growth across a ladder that exceeds ``n_se`` standard errors."""
    v = np.asarray(values, dtype=float)
    s = np.asarray(stderr, dtype=float)
    if len(v) < 2:
        raise InvalidParameterError("a trend needs at least two values")
    growth = float(v[-1] - v[0])
    growth_se = float(np.hypot(s[0], s[-1]))
    monotone = bool(np.all(np.diff(v) > 0))
    return TrendReport(v, s, growth, growth_se, monotone and growth > n_se * growth_se)
