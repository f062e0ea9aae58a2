"""
Exit-problem profile and its finite-difference twin
===================================================

The value ``v(x)`` of the exit problem on ``(0, L)`` solves
``v''/2 = v^q`` with boundary value ``n``.  The oracle gives it by
quadrature, the finite-difference solver by Newton iteration, and both
approach the large solution as ``n`` grows.
"""

# %%
# Oracle trough values increase towards v*.
import numpy as np

from singbsde import ExitProfile, FDGrid, boundary_ladder_fd, profile_v, solve_vn, solve_vstar

q, L = 3.0, 2.0
vstar = solve_vstar(L, q)
for n in (5.0, 50.0, 500.0, 5000.0):
    print(f"n={n:7.0f}  v_n={solve_vn(n, L, q):.10f}")
print(f"v*       {vstar:.10f}")

# %%
# The finite-difference ladder, warm-started rung by rung.  For large n
# the boundary layer is thinner than the mesh, so errors are reported on
# the middle half of the interval and at the first interior node.
grid = FDGrid(L, 1999)
sols = boundary_ladder_fd(q, L, [5.0, 50.0, 500.0, 5000.0], grid)
middle = (grid.x >= L / 4) & (grid.x <= 3 * L / 4)
for sol in sols:
    err = np.abs(sol.values - profile_v(grid.x, ExitProfile.finite(sol.boundary_value, L, q)))
    print(f"n={sol.boundary_value:7.0f}  midpoint={sol.at(L / 2):.6f}  "
          f"middle error={err[middle].max():.2e}  first node error={err[1]:.2e}")

# %%
# Close to the wall the large solution behaves like dist^(-1) for q = 3.
x = np.geomspace(1e-4, 1e-1, 4)
print(profile_v(x, ExitProfile.infinite(L, q)) * x)
