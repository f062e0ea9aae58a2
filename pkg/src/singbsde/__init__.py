"""Backward SDEs with singular terminal values at random times.

Monte Carlo regression solvers for truncation ladders, exact oracles for
the canonical driver ``-y^q``, a finite-difference solver for the
one-dimensional exit problem, and diagnostics for continuity at the
terminal time.
"""
__version__ = "0.1.0"

from .errors import (InvalidParameterError, NumericalError, RegressionDegeneracyError,
                     UndefinedEstimateError)
from .model import (Domain, Driver, SDECoefficients, TerminalSpec, brownian, canonical_driver,
                    conjugate_exponent, validate_driver)
from .forward import (ExitInfo, ExitTable, IndependentDiffusion, PathBundle, SubDomain, TimeGrid,
                      approach_indices, approach_times, calibrate_horizon, detect_exit, joint_exit,
                      load_bundle, save_bundle, simulate_paths)
from .backward import (LadderResult, RegressionConfig, ValueField, implicit_driver_step,
                       lsmc_solve, terminal_payoff, terminal_payoffs, theta_step,
                       truncation_ladder)
from .oracle import (ExitProfile, blowup_profile, bmL, bmx, boundary_blowup_constant,
                     keller_osserman_envelope, profile_v, solve_vn, solve_vstar, theta, theta_inv, unit_integral,
                     truncated_profile, unit_integral_closed_form)
from .pde import FDGrid, FDSolution, boundary_ladder_fd, fd_solve_1d, residual_check
from .diagnostics import (ContinuityCurve, bounded_before_Sn, continuity_curve, ko_bound_fit,
                          ladder_trend, moment_estimate_xi1, weighted_z_integral)
