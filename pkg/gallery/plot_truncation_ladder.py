"""
Truncation ladder on the exit interval
======================================

Solve the BSDE with terminal value ``k`` at the exit time of a Brownian
motion from ``(0, 2)`` by least-squares Monte Carlo, for an increasing
sequence of ``k``, and compare ``Y_0`` with the exact profile value.
"""

# %%
# Simulate exit paths once and reuse them for every rung.
from singbsde import (Domain, ExitProfile, RegressionConfig, TerminalSpec, TimeGrid, brownian,
                      canonical_driver, ko_bound_fit, profile_v, simulate_paths, truncation_ladder)

domain = Domain.interval(0.0, 2.0)
bundle = simulate_paths(brownian(1), [1.0], TimeGrid(8.0, 400), 20000, 0, domain,
                        bridge_correction=True)
print(f"censored fraction {bundle.exit_S.censored_fraction:.1e}")

# %%
# The inverse-distance basis follows the boundary blow-up.
reg = RegressionConfig(basis="poly_invdist", on_degenerate="reduce")
k_list = [5.0, 10.0, 20.0, 40.0]
ladder = truncation_ladder(bundle, canonical_driver(3), TerminalSpec.constant, k_list, reg)
for k, y0, se in zip(k_list, ladder.y0_sequence, ladder.stderr):
    exact = profile_v(1.0, ExitProfile.finite(k, 2.0, 3.0))
    print(f"k={k:5.1f}  y0={y0:.4f} +- {se:.1e}  profile={exact:.4f}")
print("monotone:", ladder.monotone_ok)

# %%
# The fitted Keller-Osserman constant per rung.  It should not grow with
# k; at this path count it still drifts, at 1e5 paths it moves by less
# than 10% per doubling.
for k, field in zip(k_list, ladder.fields):
    print(f"k={k:5.1f}  C_hat={ko_bound_fit(field, bundle, 3, stride=5).C_hat:.4f}")
