"""Forward diffusion paths, exit times and approach times.

Paths are simulated with Euler-Maruyama.  Every path draws its Brownian
increments (and its bridge-crossing uniforms) from its own Philox stream
keyed by ``(path index, seed)``, so a bundle does not depend on how the
paths are split among worker threads.
"""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import InvalidParameterError, NumericalError
from .model import Domain, SDECoefficients


@dataclass(frozen=True)
class TimeGrid:
    t_max: float
    n_steps: int

    def __post_init__(self):
        if not (self.t_max > 0 and np.isfinite(self.t_max)):
            raise InvalidParameterError(f"t_max must be positive, got {self.t_max}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidParameterError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.t_max / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class ExitInfo:
    """Exit of a single path.  ``index`` is the first grid index at or after the crossing."""

    exited: bool
    index: int
    time: float
    state: np.ndarray


@dataclass(frozen=True)
class ExitTable:
    """Per-path exit information for a whole bundle.

    Non-exited (censored) paths carry ``index == n_steps + 1`` and
    ``time == inf`` so that "active at step i" is simply ``index > i``.
    """

    exited: np.ndarray
    index: np.ndarray
    time: np.ndarray
    state: np.ndarray

    def __len__(self):
        return len(self.index)

    def __getitem__(self, i) -> ExitInfo:
        return ExitInfo(bool(self.exited[i]), int(self.index[i]), float(self.time[i]), self.state[i])

    @property
    def censored_fraction(self) -> float:
        return float(1.0 - self.exited.mean())


@dataclass(frozen=True)
class IndependentDiffusion:
    """Second stopping time: exit of an independent diffusion from its own domain."""

    coeffs: SDECoefficients
    x0: object
    domain: Domain
    bridge_correction: bool = False


@dataclass(frozen=True)
class SubDomain:
    """Second stopping time: exit of the same path from a sub-domain."""

    domain: Domain
    bridge_correction: bool = False


@dataclass(frozen=True)
class PathBundle:
    """Simulated paths plus exit bookkeeping.

    ``states`` has shape ``(n_paths, n_steps + 1, d)``.  When the second
    stopping time comes from an independent diffusion its states are kept
    in ``tau_states`` because the backward regression needs them.
    """

    states: np.ndarray
    exit_S: ExitTable
    grid: TimeGrid
    seed: int
    domain: Domain
    coeffs: SDECoefficients
    exit_tau: Optional[ExitTable] = None
    tau_states: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def dimension(self) -> int:
        return self.states.shape[2]

    @property
    def x0_shared(self) -> bool:
        s0 = self.states[:, 0, :]
        return bool(np.all(s0 == s0[0]))

    def tau_before_S(self) -> np.ndarray:
        """Indicator ``1{tau <= S}`` per path; grid ties count as ``tau <= S``."""
        if self.exit_tau is None:
            raise InvalidParameterError("bundle has no second stopping time")
        return self.exit_tau.exited & (self.exit_tau.index <= self.exit_S.index)

    def active(self, i: int) -> np.ndarray:
        return self.exit_S.index > i


def _path_rng(seed: int, path: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([path, seed], dtype=np.uint64)))


def _freeze(*arrays):
    for a in arrays:
        if a is not None:
            a.flags.writeable = False


def _bridge_probability(prev, nxt, domain: Domain, var_dt):
    """Probability that a Brownian bridge between inside points leaves an interval."""
    a, b = domain.lo[0], domain.hi[0]
    da0, da1 = np.maximum(prev - a, 0.0), np.maximum(nxt - a, 0.0)
    db0, db1 = np.maximum(b - prev, 0.0), np.maximum(b - nxt, 0.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        pa = np.exp(-2.0 * da0 * da1 / var_dt)
        pb = np.exp(-2.0 * db0 * db1 / var_dt)
    pa = np.where(var_dt > 0, pa, 0.0)
    pb = np.where(var_dt > 0, pb, 0.0)
    return 1.0 - (1.0 - pa) * (1.0 - pb), pa >= pb


def _detect_block(states, domain: Domain, grid: TimeGrid, uniforms=None, sig2=None) -> ExitTable:
    """Vectorised exit detection for a block of paths of shape ``(m, n+1, d)``."""
    m, n1, d = states.shape
    n = n1 - 1
    dt = grid.dt
    if not domain.bounded:
        # deterministic horizon: every path stops at t_max
        return ExitTable(
            np.ones(m, bool),
            np.full(m, n, dtype=np.int64),
            np.full(m, grid.t_max),
            states[:, n, :].copy(),
        )
    dist = domain.signed_distance(states)
    crossed = np.zeros((m, n1), dtype=bool)
    crossed[:, 1:] = dist[:, 1:] <= 0
    use_bridge = uniforms is not None and domain.kind == "interval"
    if use_bridge:
        x = states[:, :, 0]
        p, lower = _bridge_probability(x[:, :-1], x[:, 1:], domain, sig2 * dt)
        bridged = (uniforms < p) & ~crossed[:, 1:]
        crossed[:, 1:] |= bridged
    has = crossed.any(axis=1)
    idx = np.where(has, crossed.argmax(axis=1), n + 1).astype(np.int64)
    rows = np.nonzero(has)[0]
    j = idx[rows]
    time = np.full(m, np.inf)
    state = np.full((m, d), np.nan)
    d0 = dist[rows, j - 1]
    d1 = dist[rows, j]
    discrete = d1 <= 0
    frac = np.where(discrete, d0 / np.where(d0 - d1 > 0, d0 - d1, 1.0), 0.5)
    time[rows] = (j - 1 + frac) * dt
    proj = domain.project(states[rows, j, :])
    if use_bridge and (~discrete).any():
        b_rows = rows[~discrete]
        side = lower[b_rows, j[~discrete] - 1]
        proj[~discrete, 0] = np.where(side, domain.lo[0], domain.hi[0])
    state[rows] = proj
    return ExitTable(has, idx, time, state)


def detect_exit(
    path,
    domain: Domain,
    grid: TimeGrid,
    bridge_correction: bool = False,
    rng: Optional[np.random.Generator] = None,
    sigma: float = 1.0,
) -> ExitInfo:
    """First exit of one discretised path from ``domain``.

    ``path`` has shape ``(n_steps + 1,)`` or ``(n_steps + 1, d)``.  With
    ``bridge_correction`` (1D intervals only) a crossing between two inside
    points happens with probability ``exp(-2 d_i d_{i+1} / (sigma^2 dt))``
    per boundary, sampled from ``rng``.
    """
    path = np.asarray(path, dtype=float)
    if path.ndim == 1:
        path = path[:, None]
    if path.shape[0] != grid.n_steps + 1:
        raise InvalidParameterError("path length does not match the grid")
    if domain.bounded and domain.signed_distance(path[0]) <= 0:
        raise InvalidParameterError("path must start inside the domain")
    uniforms = sig2 = None
    if bridge_correction and domain.kind == "interval":
        if rng is None:
            raise InvalidParameterError("bridge correction needs a random stream")
        uniforms = rng.random((1, grid.n_steps))
        sig2 = np.full((1, grid.n_steps), float(sigma) ** 2)
    table = _detect_block(path[None], domain, grid, uniforms, sig2)
    return table[0]


def _simulate_block(coeffs, x0, grid, lo, hi, seed, domain, bridge, keep_states):
    m = hi - lo
    d = coeffs.dimension
    n = grid.n_steps
    dt = grid.dt
    noise = np.empty((m, n, d))
    uniforms = np.empty((m, n)) if bridge else None
    for r, path in enumerate(range(lo, hi)):
        g = _path_rng(seed, path)
        noise[r] = g.standard_normal((n, d))
        if bridge:
            uniforms[r] = g.random(n)
    noise *= np.sqrt(dt)
    states = np.empty((m, n + 1, d))
    states[:, 0, :] = x0
    sig2 = np.empty((m, n)) if bridge else None
    x = states[:, 0, :].copy()
    for i in range(n):
        drift = coeffs.b(x)
        sig = coeffs.sigma(x)
        if bridge:
            sig2[:, i] = sig[:, 0, 0] ** 2
        x = x + drift * dt + np.einsum("mij,mj->mi", sig, noise[:, i, :])
        if not np.all(np.isfinite(x)):
            bad = lo + int(np.nonzero(~np.all(np.isfinite(x), axis=1))[0][0])
            raise NumericalError(f"non-finite state on path {bad} at step {i + 1}")
        states[:, i + 1, :] = x
    exits = _detect_block(states, domain, grid, uniforms, sig2)
    return (states if keep_states else None), exits


def _simulate(coeffs, x0, grid, n_paths, seed, domain, bridge, threads, chunk_size, keep_states=True):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (coeffs.dimension,):
        raise InvalidParameterError("x0 dimension does not match the coefficients")
    if domain.dimension != coeffs.dimension:
        raise InvalidParameterError("domain dimension does not match the coefficients")
    if domain.bounded and domain.signed_distance(x0) <= 0:
        raise InvalidParameterError(f"x0={x0} is not inside the domain")
    if n_paths < 1:
        raise InvalidParameterError("n_paths must be >= 1")
    bridge = bool(bridge) and domain.kind == "interval"
    bounds = [(lo, min(lo + chunk_size, n_paths)) for lo in range(0, n_paths, chunk_size)]
    d = coeffs.dimension
    n = grid.n_steps
    states = np.empty((n_paths, n + 1, d)) if keep_states else None
    exited = np.empty(n_paths, bool)
    index = np.empty(n_paths, np.int64)
    time = np.empty(n_paths)
    state = np.empty((n_paths, d))

    def work(b):
        lo, hi = b
        st, ex = _simulate_block(coeffs, x0, grid, lo, hi, seed, domain, bridge, keep_states)
        if keep_states:
            states[lo:hi] = st
        exited[lo:hi] = ex.exited
        index[lo:hi] = ex.index
        time[lo:hi] = ex.time
        state[lo:hi] = ex.state

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, bounds))
    else:
        for b in bounds:
            work(b)
    return states, ExitTable(exited, index, time, state)


def simulate_paths(
    coeffs: SDECoefficients,
    x0,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    domain: Domain,
    bridge_correction: bool = False,
    threads: int = 1,
    chunk_size: int = 2048,
) -> PathBundle:
    """Euler-Maruyama paths started at ``x0`` with their exit from ``domain``.

    The result is bit-identical for any ``threads`` and ``chunk_size``.
    """
    states, exits = _simulate(
        coeffs, x0, grid, n_paths, seed, domain, bridge_correction, threads, chunk_size
    )
    _freeze(states, exits.exited, exits.index, exits.time, exits.state)
    meta = {"bridge_correction": bool(bridge_correction) and domain.kind == "interval",
            "censored_fraction": exits.censored_fraction}
    return PathBundle(states, exits, grid, int(seed), domain, coeffs, metadata=meta)


def approach_times(path, domain: Domain, n_list) -> dict:
    """First grid index where ``dist <= 1/n`` for each ``n`` (``None`` if never)."""
    dist = np.atleast_1d(domain.signed_distance(np.asarray(path, dtype=float)))
    out = {}
    for n in n_list:
        if not n >= 1:
            raise InvalidParameterError(f"approach level must be >= 1, got {n}")
        hit = np.nonzero(dist <= 1.0 / n)[0]
        out[n] = int(hit[0]) if hit.size else None
    return out


def approach_indices(bundle: PathBundle, n: float) -> np.ndarray:
    """Per-path index of ``S_n``, capped at the exit index of ``S``."""
    if not n >= 1:
        raise InvalidParameterError(f"approach level must be >= 1, got {n}")
    cap = np.minimum(bundle.exit_S.index, bundle.grid.n_steps)
    out = np.empty(bundle.n_paths, dtype=np.int64)
    step = 4096
    for lo in range(0, bundle.n_paths, step):
        hi = min(lo + step, bundle.n_paths)
        dist = bundle.domain.signed_distance(bundle.states[lo:hi])
        hit = dist <= 1.0 / n
        first = np.where(hit.any(axis=1), hit.argmax(axis=1), bundle.grid.n_steps + 1)
        out[lo:hi] = np.minimum(first, cap[lo:hi])
    return out


def joint_exit(
    bundle: PathBundle,
    tau_source: Union[IndependentDiffusion, SubDomain],
    seed_tau: int,
    threads: int = 1,
    chunk_size: int = 2048,
) -> PathBundle:
    """Attach a second stopping time ``tau`` to ``bundle``.

    Grid ties ``index(tau) == index(S)`` count as ``tau <= S``; their number
    is recorded in ``metadata["tau_ties"]``.
    """
    grid = bundle.grid
    if isinstance(tau_source, IndependentDiffusion):
        states, exits = _simulate(
            tau_source.coeffs, tau_source.x0, grid, bundle.n_paths, seed_tau,
            tau_source.domain, tau_source.bridge_correction, threads, chunk_size,
        )
        tau_states = states
    elif isinstance(tau_source, SubDomain):
        sub = tau_source.domain
        if sub.dimension != bundle.dimension:
            raise InvalidParameterError("sub-domain dimension mismatch")
        tau_states = None
        parts = []
        for lo in range(0, bundle.n_paths, chunk_size):
            hi = min(lo + chunk_size, bundle.n_paths)
            block = bundle.states[lo:hi]
            uniforms = sig2 = None
            if tau_source.bridge_correction and sub.kind == "interval":
                uniforms = np.stack([_path_rng(seed_tau, p).random(grid.n_steps) for p in range(lo, hi)])
                sig = bundle.coeffs.sigma(block[:, :-1, :].reshape(-1, bundle.dimension))
                sig2 = (sig[:, 0, 0] ** 2).reshape(hi - lo, grid.n_steps)
            parts.append(_detect_block(block, sub, grid, uniforms, sig2))
        exits = ExitTable(*(np.concatenate([getattr(p, f) for p in parts])
                            for f in ("exited", "index", "time", "state")))
    else:
        raise InvalidParameterError(f"unsupported tau source {tau_source!r}")
    _freeze(tau_states, exits.exited, exits.index, exits.time, exits.state)
    ties = int(np.sum(exits.exited & bundle.exit_S.exited & (exits.index == bundle.exit_S.index)))
    meta = dict(bundle.metadata, tau_ties=ties, tie_rule="tau<=S", seed_tau=int(seed_tau))
    return PathBundle(bundle.states, bundle.exit_S, grid, bundle.seed, bundle.domain,
                      bundle.coeffs, exits, tau_states, meta)


def calibrate_horizon(
    coeffs: SDECoefficients,
    x0,
    domain: Domain,
    n_steps: int,
    seed: int,
    t_max: float = 1.0,
    pilot_paths: int = 4000,
    target: float = 1e-3,
    bridge_correction: bool = False,
    max_doublings: int = 16,
) -> float:
    """Double ``t_max`` until the pilot non-exit fraction drops below ``target``."""
    if not domain.bounded:
        return float(t_max)
    for _ in range(max_doublings + 1):
        grid = TimeGrid(t_max, n_steps)
        _, exits = _simulate(coeffs, x0, grid, pilot_paths, seed, domain,
                             bridge_correction, 1, 2048, keep_states=False)
        if exits.censored_fraction < target:
            return float(t_max)
        t_max *= 2.0
    raise NumericalError(f"non-exit fraction still >= {target} at t_max={t_max / 2}")


# binary dump ---------------------------------------------------------------

_MAGIC = b"SBSDEPB\x00"
_VERSION = 1
_HEADER = struct.Struct("<8sIQQIdQI")


def save_bundle(path, bundle: PathBundle) -> None:
    """Write ``bundle`` in the versioned little-endian layout described in the README."""
    flags = 1 if bundle.exit_tau is not None else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, bundle.n_paths, bundle.grid.n_steps,
                              bundle.dimension, bundle.grid.t_max, bundle.seed, flags))
        np.ascontiguousarray(bundle.states, dtype="<f8").tofile(fh)
        tables = [bundle.exit_S] + ([bundle.exit_tau] if flags else [])
        for t in tables:
            t.exited.astype("u1").tofile(fh)
            t.index.astype("<i8").tofile(fh)
            t.time.astype("<f8").tofile(fh)
            np.ascontiguousarray(t.state, dtype="<f8").tofile(fh)


def load_bundle(path, domain: Domain, coeffs: SDECoefficients):
    """Read a bundle written by :func:`save_bundle`.

    Domain and coefficients are code, not data, so the caller supplies them.
    Independent-diffusion ``tau_states`` are not stored.
    """
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        magic, version, n_paths, n_steps, d, t_max, seed, flags = _HEADER.unpack(raw)
        if magic != _MAGIC:
            raise InvalidParameterError(f"{path}: not a path bundle")
        if version != _VERSION:
            raise InvalidParameterError(f"{path}: unsupported bundle version {version}")
        states = np.fromfile(fh, dtype="<f8", count=n_paths * (n_steps + 1) * d)
        states = states.reshape(n_paths, n_steps + 1, d)

        def table():
            ex = np.fromfile(fh, dtype="u1", count=n_paths).astype(bool)
            idx = np.fromfile(fh, dtype="<i8", count=n_paths)
            tm = np.fromfile(fh, dtype="<f8", count=n_paths)
            st = np.fromfile(fh, dtype="<f8", count=n_paths * d).reshape(n_paths, d)
            return ExitTable(ex, idx, tm, st)

        exit_S = table()
        exit_tau = table() if flags & 1 else None
    return PathBundle(states, exit_S, TimeGrid(t_max, int(n_steps)), int(seed), domain,
                      coeffs, exit_tau)
