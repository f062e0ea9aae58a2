"""Batch experiment runner.

A run is described by a flat YAML document; ``run_experiment`` turns it
into ``summary.csv``, ``curves.csv``, ``checks.csv`` and ``meta.json``
inside one output directory.  CSV bodies depend only on the config, so
two runs with the same seed produce identical files whatever the thread
count; timestamps live in ``meta.json`` only.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from . import oracle
from .backward import RegressionConfig, truncation_ladder
from .diagnostics import bounded_before_Sn, continuity_curve, ko_bound_fit
from .errors import InvalidParameterError
from .forward import (IndependentDiffusion, TimeGrid, calibrate_horizon, joint_exit,
                      save_bundle, simulate_paths)
from .model import Domain, TerminalSpec, brownian, canonical_driver
from .pde import FDGrid, boundary_ladder_fd, residual_check

KINDS = ("ladder-deterministic", "ladder-exit", "xi1", "xi2", "pde-crosscheck", "oracle-table")
ENV_OUT = "SINGBSDE_OUT"
SUMMARY_COLUMNS = ("k", "y0", "stderr", "oracle", "oracle_source", "rel_error")
CURVE_COLUMNS = ("curve_id", "t", "value", "stderr")
CHECK_COLUMNS = ("check", "value", "threshold", "passed")


class ConfigError(InvalidParameterError):
    """Invalid experiment config; the message names the key and line."""


class ExperimentError(RuntimeError):
    """A stage of an experiment failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


# config ----------------------------------------------------------------------

_NUMBER = "number"
_INT = "int"
_BOOL = "bool"
_STR = "str"
_NUMBERS = "list of numbers"
_HORIZON = "number or 'auto'"

# key -> (type, meaning)
KEYS = {
    "experiment": (_STR, "one of " + ", ".join(KINDS)),
    "q": (_NUMBER, "driver exponent, > 1"),
    "eta": (_NUMBER, "constant eta in f(y) = -y|y|^(q-1)/eta"),
    "domain": (_STR, "'interval' (0, L) or 'whole_space'"),
    "L": (_NUMBER, "interval length"),
    "x0": (_NUMBER, "start of the forward diffusion"),
    "tau_x0": (_NUMBER, "start of the independent diffusion defining tau"),
    "T": (_HORIZON, "alias of t_max"),
    "t_max": (_HORIZON, "simulation horizon, or 'auto' to calibrate it"),
    "n_steps": (_INT, "time steps"),
    "n_paths": (_INT, "Monte Carlo paths"),
    "k_list": (_NUMBERS, "truncation levels, increasing"),
    "degree": (_INT, "regression degree"),
    "basis": (_STR, "'poly' or 'poly_invdist'"),
    "ridge": (_NUMBER, "ridge weight"),
    "invdist_floor": (_NUMBER, "floor of the distance feature, in units of sqrt(dt)"),
    "scheme": (_STR, "'theta' or 'implicit'"),
    "on_degenerate": (_STR, "'raise' or 'reduce'"),
    "bridge": (_BOOL, "Brownian-bridge exit correction"),
    "seed": (_INT, "seed of the forward paths"),
    "seed_tau": (_INT, "seed of the tau diffusion (default seed + 1)"),
    "threads": (_INT, "simulation worker threads"),
    "n_list": (_NUMBERS, "boundary values (pde, oracle) or approach levels (ladder-exit)"),
    "m": (_INT, "interior finite-difference nodes"),
    "stride": (_INT, "step stride of reported curves"),
    "tolerance": (_NUMBER, "relative tolerance against the oracle"),
    "output": (_STR, "output directory name under the output root"),
}

_DEFAULTS = {
    "ladder-deterministic": dict(q=2.0, domain="whole_space", x0=0.0, t_max=1.0, n_steps=200,
                                 n_paths=1000, k_list=[1.0, 10.0, 100.0, 1000.0], tolerance=0.01),
    "ladder-exit": dict(q=3.0, t_max="auto", n_steps=2000, n_paths=100000,
                        k_list=[5.0, 10.0, 20.0, 40.0], basis="poly_invdist",
                        on_degenerate="reduce", n_list=[1.0, 2.0, 4.0, 8.0], tolerance=0.05),
    "xi1": dict(q=3.0, t_max="auto", n_steps=800, n_paths=100000, k_list=[12.5, 25.0, 50.0],
                basis="poly_invdist", on_degenerate="reduce"),
    "xi2": dict(q=3.0, t_max="auto", n_steps=800, n_paths=100000, k_list=[12.5, 25.0, 50.0],
                basis="poly_invdist", on_degenerate="reduce"),
    "pde-crosscheck": dict(q=3.0, n_list=[5.0], m=1999, tolerance=1e-3),
    "oracle-table": dict(q=3.0, n_list=[5.0, 50.0, 500.0, 5000.0]),
}

_COMMON = dict(eta=1.0, domain="interval", L=2.0, degree=3, basis="poly", ridge=0.0,
               invdist_floor=0.1, scheme="theta", on_degenerate="raise", bridge=True, seed=0,
               threads=1, output=None)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    q: float
    eta: float
    domain: str
    L: float
    x0: Optional[float]
    tau_x0: Optional[float]
    t_max: object
    n_steps: Optional[int]
    n_paths: Optional[int]
    k_list: Optional[tuple]
    degree: int
    basis: str
    ridge: float
    invdist_floor: float
    scheme: str
    on_degenerate: str
    bridge: bool
    seed: int
    seed_tau: Optional[int]
    threads: int
    n_list: Optional[tuple]
    m: Optional[int]
    stride: Optional[int]
    tolerance: Optional[float]
    output: Optional[str]

    def regression(self) -> RegressionConfig:
        return RegressionConfig(degree=self.degree, basis=self.basis, ridge=self.ridge,
                                scheme=self.scheme, on_degenerate=self.on_degenerate,
                                invdist_floor=self.invdist_floor)

    def echo(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def _type_ok(kind: str, value) -> bool:
    is_num = isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == _NUMBER:
        return is_num
    if kind == _INT:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == _BOOL:
        return isinstance(value, bool)
    if kind == _STR:
        return isinstance(value, str)
    if kind == _NUMBERS:
        return isinstance(value, list) and len(value) > 0 and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    if kind == _HORIZON:
        return is_num or value == "auto"
    raise AssertionError(kind)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a flat YAML experiment config."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if root is None:
        raise ConfigError("empty config: missing required key 'experiment'")
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"line {root.start_mark.line + 1}: config must be a key-value mapping")
    raw, lines = {}, {}
    for key_node, value_node in root.value:
        key = key_node.value
        line = key_node.start_mark.line + 1
        if key not in KEYS:
            raise ConfigError(f"line {line}: unknown key '{key}'")
        if key in raw:
            raise ConfigError(f"line {line}: duplicate key '{key}'")
        value = yaml.safe_load(yaml.serialize(value_node))
        kind = KEYS[key][0]
        if not _type_ok(kind, value):
            raise ConfigError(f"line {line}: key '{key}' expects {kind}, got {value!r}")
        raw[key], lines[key] = value, line

    def fail(key, msg):
        where = f"line {lines[key]}: " if key in lines else ""
        raise ConfigError(f"{where}key '{key}': {msg}")

    if "experiment" not in raw:
        raise ConfigError("missing required key 'experiment'")
    kind = raw["experiment"]
    if kind not in KINDS:
        fail("experiment", f"unknown experiment {kind!r}; expected one of {', '.join(KINDS)}")
    if "T" in raw and "t_max" in raw:
        fail("T", "give either T or t_max, not both")
    if "T" in raw:
        raw["t_max"], lines["t_max"] = raw.pop("T"), lines["T"]

    values = dict(_COMMON)
    values.update(_DEFAULTS[kind])
    values.update(raw)
    for key in ("t_max", "n_steps", "n_paths", "k_list", "n_list", "m", "stride", "tolerance",
                "x0", "tau_x0", "seed_tau"):
        values.setdefault(key, None)
    for key in ("x0", "tau_x0"):
        if values.get(key) is None and values["domain"] == "interval":
            values[key] = values["L"] / 2.0

    # model-level validation before anything runs
    try:
        canonical_driver(values["q"], values["eta"])
    except InvalidParameterError as exc:
        fail("q" if "q must" in str(exc) else "eta", str(exc))
    if values["domain"] not in ("interval", "whole_space"):
        fail("domain", "expected 'interval' or 'whole_space'")
    if kind == "ladder-deterministic" and values["domain"] != "whole_space":
        fail("domain", "ladder-deterministic runs on the whole space")
    if kind in ("ladder-exit", "xi1", "xi2") and values["domain"] != "interval":
        fail("domain", f"{kind} needs domain 'interval'")
    if not values["L"] > 0:
        fail("L", "must be positive")
    if values["domain"] == "interval":
        for key in ("x0", "tau_x0"):
            if not 0 < values[key] < values["L"]:
                fail(key, f"must lie inside (0, {values['L']})")
    for key in ("n_steps", "n_paths", "m", "threads", "stride"):
        if values.get(key) is not None and values[key] < 1:
            fail(key, "must be >= 1")
    if values["degree"] < 0:
        fail("degree", "must be >= 0")
    if values["ridge"] < 0:
        fail("ridge", "must be >= 0")
    if isinstance(values["t_max"], (int, float)) and not values["t_max"] > 0:
        fail("t_max", "must be positive")
    if values.get("tolerance") is not None and not values["tolerance"] > 0:
        fail("tolerance", "must be positive")
    for key in ("k_list", "n_list"):
        seq = values.get(key)
        if seq is None:
            continue
        if any(not v > 0 for v in seq):
            fail(key, "entries must be positive")
        if any(b <= a for a, b in zip(seq, seq[1:])):
            fail(key, "entries must be strictly increasing")
        values[key] = tuple(float(v) for v in seq)
    if kind in ("ladder-deterministic", "ladder-exit", "xi1", "xi2") and len(values["k_list"]) < 2:
        fail("k_list", "a ladder needs at least two levels")
    try:
        RegressionConfig(degree=values["degree"], basis=values["basis"], ridge=values["ridge"],
                         scheme=values["scheme"], on_degenerate=values["on_degenerate"])
    except InvalidParameterError as exc:
        key = next((k for k in ("basis", "scheme", "on_degenerate") if k in str(exc)), "basis")
        fail(key, str(exc))
    values["q"] = float(values["q"])
    values["eta"] = float(values["eta"])
    values["L"] = float(values["L"])
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


# artifacts ---------------------------------------------------------------------


def fmt(x) -> str:
    """Shortest round-trip decimal; empty for missing values."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


@dataclass
class ArtifactSet:
    directory: Path
    summary: list = field(default_factory=list)
    curves: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    curve_ids: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c[3] for c in self.checks)

    def add_row(self, k, y0, stderr=None, oracle_value=None, source=None):
        rel = None
        if oracle_value is not None and oracle_value != 0:
            rel = abs(y0 - oracle_value) / abs(oracle_value)
        self.summary.append((k, y0, stderr, oracle_value, source, rel))

    def add_curve(self, curve_id, t, value, stderr):
        self.curve_ids.append(curve_id)
        for a, b, c in zip(t, value, stderr):
            if np.isfinite(b):
                self.curves.append((curve_id, a, b, c))

    def check(self, name, value, threshold, passed):
        self.checks.append((name, value, threshold, bool(passed)))

    def write(self):
        self.directory.mkdir(parents=True, exist_ok=True)
        for name, cols, rows in (("summary.csv", SUMMARY_COLUMNS, self.summary),
                                 ("curves.csv", CURVE_COLUMNS, self.curves),
                                 ("checks.csv", CHECK_COLUMNS, self.checks)):
            with open(self.directory / name, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(cols)
                w.writerows([fmt(v) for v in row] for row in rows)
        with open(self.directory / "meta.json", "w") as fh:
            json.dump(self.meta, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:
        raise ExperimentError(name, exc) from exc


def _horizon(cfg, coeffs, domain):
    if cfg.t_max != "auto":
        return float(cfg.t_max)
    return calibrate_horizon(coeffs, [cfg.x0], domain, cfg.n_steps, cfg.seed,
                             bridge_correction=cfg.bridge)


def _ladder_checks(art, lad):
    art.check("ladder_monotone", lad.monotone_violation,
              -3.0 * float(lad.increment_stderr.max()) if len(lad.increment_stderr) else 0.0,
              lad.monotone_ok)


def _run_deterministic(cfg, art, threads):
    domain = Domain.whole_space(1)
    grid = TimeGrid(float(cfg.t_max), cfg.n_steps)
    bundle = _stage("simulate", simulate_paths, brownian(1), [cfg.x0], grid, cfg.n_paths,
                    cfg.seed, domain, threads=threads)
    driver = canonical_driver(cfg.q, cfg.eta)
    lad = _stage("ladder", truncation_ladder, bundle, driver, TerminalSpec.constant,
                 cfg.k_list, cfg.regression())
    T = grid.t_max
    for k, y0, se in zip(cfg.k_list, lad.y0_sequence, lad.stderr):
        exact = oracle.theta_inv(oracle.theta(k, cfg.q, cfg.eta) + T, cfg.q, cfg.eta)
        art.add_row(k, y0, se, exact, "theta_inverse")
        art.check(f"rung_k={fmt(k)}", art.summary[-1][5], cfg.tolerance, art.summary[-1][5] <= cfg.tolerance)
    limit = oracle.theta_inv(T, cfg.q, cfg.eta)
    art.add_row(math.inf, limit, 0.0, limit, "blowup_profile")
    rel = abs(lad.y0_sequence[-1] - limit) / limit
    art.check("top_rung_vs_singular_limit", rel, 0.015, rel <= 0.015)
    _ladder_checks(art, lad)
    times = grid.times[:: cfg.stride or max(cfg.n_steps // 100, 1)]
    for k, f in zip(cfg.k_list, lad.fields):
        vals = [float(np.nanmean(f.values_at(bundle, int(round(t / grid.dt))))) for t in times]
        art.add_curve(f"y_k={fmt(k)}", times, vals, [0.0] * len(times))


def _run_exit(cfg, art, threads):
    domain = Domain.interval(0.0, cfg.L)
    coeffs = brownian(1)
    t_max = _stage("calibrate", _horizon, cfg, coeffs, domain)
    grid = TimeGrid(t_max, cfg.n_steps)
    bundle = _stage("simulate", simulate_paths, coeffs, [cfg.x0], grid, cfg.n_paths, cfg.seed,
                    domain, cfg.bridge, threads)
    art.meta["t_max"] = t_max
    art.meta["censored_fraction"] = bundle.exit_S.censored_fraction
    driver = canonical_driver(cfg.q, cfg.eta)
    lad = _stage("ladder", truncation_ladder, bundle, driver, TerminalSpec.constant,
                 cfg.k_list, cfg.regression())
    scale = cfg.eta ** (1.0 / (cfg.q - 1.0))
    for k, y0, se in zip(cfg.k_list, lad.y0_sequence, lad.stderr):
        # v''/2 = v^q / eta is solved by eta^(1/(q-1)) times the eta = 1 profile
        prof = _stage("oracle", oracle.ExitProfile.finite, k / scale, cfg.L, cfg.q)
        exact = scale * oracle.profile_v(cfg.x0, prof)
        art.add_row(k, y0, se, exact, "profile_v")
        art.check(f"rung_k={fmt(k)}", art.summary[-1][5], cfg.tolerance, art.summary[-1][5] <= cfg.tolerance)
    _ladder_checks(art, lad)
    fits = [_stage("ko_bound_fit", ko_bound_fit, f, bundle, cfg.q, stride=5) for f in lad.fields]
    C = [f.C_hat for f in fits]
    art.add_curve("ko_C_hat", cfg.k_list, C, [0.0] * len(C))
    for a, b, ka, kb in zip(C, C[1:], cfg.k_list, cfg.k_list[1:]):
        change = abs(b - a) / a
        art.check(f"ko_change_k={fmt(ka)}->{fmt(kb)}", change, 0.2, change < 0.2)
    rows = _stage("bounded_before_Sn", bounded_before_Sn, lad.fields[-1], bundle, cfg.n_list, C[-1], cfg.q)
    for r in rows:
        art.check(f"bounded_before_S_n={fmt(r.n)}", r.max_value, r.envelope, not r.violated)
    stride = cfg.stride or max(cfg.n_steps // 100, 1)
    steps = np.arange(0, cfg.n_steps, stride)
    idx = bundle.exit_S.index
    for k, f in zip(cfg.k_list, lad.fields):
        means, ses = [], []
        for i in steps:
            y = f.values_at(bundle, int(i))[idx > i]
            means.append(float(y.mean()) if y.size >= 30 else math.nan)
            ses.append(float(y.std(ddof=1) / math.sqrt(y.size)) if y.size >= 30 else math.nan)
        art.add_curve(f"mean_y_k={fmt(k)}", steps * grid.dt, means, ses)


def _run_xi(cfg, art, threads):
    domain = Domain.interval(0.0, cfg.L)
    coeffs = brownian(1)
    t_max = _stage("calibrate", _horizon, cfg, coeffs, domain)
    grid = TimeGrid(t_max, cfg.n_steps)
    bundle = _stage("simulate", simulate_paths, coeffs, [cfg.x0], grid, cfg.n_paths, cfg.seed,
                    domain, cfg.bridge, threads)
    seed_tau = cfg.seed + 1 if cfg.seed_tau is None else cfg.seed_tau
    source = IndependentDiffusion(coeffs, [cfg.tau_x0], domain, cfg.bridge)
    bundle = _stage("joint_exit", joint_exit, bundle, source, seed_tau, threads)
    art.meta.update(t_max=t_max, tau_ties=bundle.metadata["tau_ties"],
                    tie_rule=bundle.metadata["tie_rule"], seed_tau=seed_tau,
                    p_tau_before_S=float(bundle.tau_before_S().mean()))
    driver = canonical_driver(cfg.q, cfg.eta)
    family = TerminalSpec.xi1 if cfg.experiment == "xi1" else TerminalSpec.xi2
    lad = _stage("ladder", truncation_ladder, bundle, driver, family, cfg.k_list, cfg.regression())
    for k, y0, se in zip(cfg.k_list, lad.y0_sequence, lad.stderr):
        art.add_row(k, y0, se)
    _ladder_checks(art, lad)
    event = "tau>S" if cfg.experiment == "xi1" else "tau<=S"
    stride = cfg.stride or max(cfg.n_steps // 100, 1)
    curve = _stage("continuity_curve", continuity_curve, lad.fields[-1], bundle, event, stride)
    art.add_curve(f"continuity_{event}_k={fmt(cfg.k_list[-1])}", curve.times,
                  np.where(curve.low_sample, np.nan, curve.conditional_mean), curve.stderr)
    art.meta["low_sample_points"] = int(curve.low_sample.sum())
    if curve.defined:
        ratio = curve.decay_ratio()
        art.check("continuity_final_over_initial", ratio, 0.1, ratio <= 0.1)
    else:
        art.check("continuity_final_over_initial", None, 0.1, False)


def _run_pde(cfg, art, threads):
    grid = FDGrid(cfg.L, cfg.m)
    sols = _stage("fd_solve", boundary_ladder_fd, cfg.q, cfg.L, cfg.n_list, grid)
    mid = grid.x.size // 2
    for n, sol in zip(cfg.n_list, sols):
        prof = _stage("oracle", oracle.ExitProfile.finite, n, cfg.L, cfg.q)
        exact = oracle.profile_v(grid.x, prof)
        err = float(np.max(np.abs(sol.values - exact)))
        art.add_row(n, float(sol.at(cfg.L / 2.0)), 0.0, prof.v_l, "solve_vn")
        art.check(f"max_grid_error_n={fmt(n)}", err, cfg.tolerance, err <= cfg.tolerance)
        res = residual_check(sol, cfg.q)
        art.check(f"residual_n={fmt(n)}", res, 1e-10 * (1.0 + n ** cfg.q),
                  res <= 1e-10 * (1.0 + n ** cfg.q))
        art.add_curve(f"fd_n={fmt(n)}", grid.x, sol.values, np.zeros(grid.x.size))
    mids = [s.values[mid] for s in sols]
    art.check("midpoints_increasing", min(np.diff(mids)) if len(mids) > 1 else 0.0, 0.0,
              all(b > a for a, b in zip(mids, mids[1:])))
    art.add_row(math.inf, oracle.solve_vstar(cfg.L, cfg.q), 0.0, None, "solve_vstar")


def _run_oracle_table(cfg, art, threads):
    vstar = oracle.solve_vstar(cfg.L, cfg.q)
    prev = 0.0
    increasing = True
    for n in cfg.n_list:
        vn = oracle.solve_vn(n, cfg.L, cfg.q)
        res = abs(oracle.bmx(n, vn, cfg.q) - cfg.L / 2.0)
        art.add_row(n, vn, 0.0, None, "solve_vn")
        art.check(f"bmx_residual_n={fmt(n)}", res, 1e-9, res <= 1e-9)
        increasing &= prev < vn < vstar
        prev = vn
    art.add_row(math.inf, vstar, 0.0, None, "solve_vstar")
    art.check("v_n_increasing_below_vstar", prev, vstar, increasing)
    quad = oracle.unit_integral(cfg.q)
    closed = oracle.unit_integral_closed_form(cfg.q)
    art.check("unit_integral_vs_beta", abs(quad - closed), 1e-8, abs(quad - closed) <= 1e-8)


_RUNNERS = {
    "ladder-deterministic": _run_deterministic,
    "ladder-exit": _run_exit,
    "xi1": _run_xi,
    "xi2": _run_xi,
    "pde-crosscheck": _run_pde,
    "oracle-table": _run_oracle_table,
}


def output_root(out=None) -> Path:
    return Path(out or os.environ.get(ENV_OUT) or "runs")


def run_experiment(cfg: ExperimentConfig, out=None, threads: Optional[int] = None) -> ArtifactSet:
    """Run ``cfg`` and write its artifacts; ``threads`` overrides the config."""
    threads = cfg.threads if threads is None else int(threads)
    directory = output_root(out) / (cfg.output or cfg.experiment)
    art = ArtifactSet(directory)
    start = time.time()
    _RUNNERS[cfg.experiment](cfg, art, threads)
    art.meta.update(
        config=cfg.echo(),
        code_version=__version__,
        seed=cfg.seed,
        threads=threads,
        wall_time_s=time.time() - start,
        started=time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(start)),
        python=platform.python_version(),
        numpy=np.__version__,
        curves=art.curve_ids,
        passed=art.passed,
    )
    art.write()
    return art


# plot data ---------------------------------------------------------------------


def _read_csv(path: Path):
    if not path.is_file():
        raise FileNotFoundError(f"missing artifact: {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit_plot_data(directory) -> list:
    """Write whitespace-delimited ``.dat`` files next to the CSV artifacts.

    One file per curve with columns ``t value lower upper`` (two standard
    errors), and ``ladder.dat`` with ``log10_k k y0 stderr``.
    """
    directory = Path(directory)
    summary = _read_csv(directory / "summary.csv")
    curves = _read_csv(directory / "curves.csv")
    meta_path = directory / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"missing artifact: {meta_path}")
    ids = json.loads(meta_path.read_text()).get("curves", [])
    written = []
    for cid in ids:
        rows = [r for r in curves if r["curve_id"] == cid]
        if not rows:
            warnings.warn(f"curve {cid} has no points; writing header only")
        path = directory / (_safe(cid) + ".dat")
        with open(path, "w") as fh:
            fh.write(f"# {cid}\n# t value lower upper\n")
            for r in rows:
                v, s = float(r["value"]), float(r["stderr"]) if r["stderr"] else 0.0
                s = 0.0 if math.isnan(s) else s
                fh.write(f"{r['t']} {r['value']} {fmt(v - 2 * s)} {fmt(v + 2 * s)}\n")
        written.append(path)
    finite = [r for r in summary if r["k"] not in ("inf", "")]
    if finite:
        path = directory / "ladder.dat"
        with open(path, "w") as fh:
            fh.write("# truncation ladder\n# log10_k k y0 stderr\n")
            for r in finite:
                fh.write(f"{fmt(math.log10(float(r['k'])))} {r['k']} {r['y0']} {r['stderr'] or 'nan'}\n")
        written.append(path)
    return written


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in name)


# command line --------------------------------------------------------------------


def _numbers(text):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--threads", type=int, default=None, help="simulation worker threads")
    common.add_argument("--out", default=None, help=f"output root (default ${ENV_OUT} or ./runs)")
    parser = argparse.ArgumentParser(prog="singbsde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate exit paths and save a bundle")
    p.add_argument("--L", type=float, default=2.0)
    p.add_argument("--x0", type=float, default=None)
    p.add_argument("--t-max", type=float, default=8.0)
    p.add_argument("--n-steps", type=int, default=800)
    p.add_argument("--n-paths", type=int, default=10000)
    p.add_argument("--no-bridge", action="store_true")

    p = sub.add_parser("oracle", parents=[common], help="tabulate v_n and v*")
    p.add_argument("--q", type=float, default=3.0)
    p.add_argument("--L", type=float, default=2.0)
    p.add_argument("--n", type=_numbers, default=[5.0, 50.0, 500.0, 5000.0])

    p = sub.add_parser("pde", parents=[common], help="finite-difference cross-check")
    p.add_argument("--q", type=float, default=3.0)
    p.add_argument("--L", type=float, default=2.0)
    p.add_argument("--n", type=_numbers, default=[5.0])
    p.add_argument("--m", type=int, default=1999)

    p = sub.add_parser("experiment", parents=[common], help="run a YAML experiment config")
    p.add_argument("config")

    p = sub.add_parser("report", help="write plot-ready .dat files for an artifact directory")
    p.add_argument("directory")
    return parser


def _config_from(kind, args, **extra) -> ExperimentConfig:
    doc = {"experiment": kind, **extra}
    if args.seed is not None:
        doc["seed"] = args.seed
    return parse_config(yaml.safe_dump(doc))


def _print_table(art: ArtifactSet):
    print(",".join(SUMMARY_COLUMNS))
    for row in art.summary:
        print(",".join(fmt(v) for v in row))
    for name, value, threshold, ok in art.checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {fmt(value)} (threshold {fmt(threshold)})")
    print(f"artifacts in {art.directory}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            for path in emit_plot_data(args.directory):
                print(path)
            return 0
        if args.command == "simulate":
            domain = Domain.interval(0.0, args.L)
            x0 = args.L / 2.0 if args.x0 is None else args.x0
            bundle = simulate_paths(brownian(1), [x0], TimeGrid(args.t_max, args.n_steps),
                                    args.n_paths, args.seed or 0, domain,
                                    not args.no_bridge, args.threads or 1)
            directory = output_root(args.out) / "simulate"
            directory.mkdir(parents=True, exist_ok=True)
            save_bundle(directory / "bundle.bin", bundle)
            print(f"{bundle.n_paths} paths, censored fraction {fmt(bundle.exit_S.censored_fraction)}")
            print(f"bundle written to {directory / 'bundle.bin'}")
            return 0
        if args.command == "oracle":
            cfg = _config_from("oracle-table", args, q=args.q, L=args.L, n_list=args.n)
        elif args.command == "pde":
            cfg = _config_from("pde-crosscheck", args, q=args.q, L=args.L, n_list=args.n, m=args.m)
        else:
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg = ExperimentConfig(**{**asdict(cfg), "seed": args.seed})
        art = run_experiment(cfg, args.out, args.threads)
    except (ConfigError, ExperimentError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _print_table(art)
    return 0 if art.passed else 1


if __name__ == "__main__":
    sys.exit(main())
