"""Solve once on an 8 x 8 crisscross mesh and look at the pieces.

The velocity is the curl of a C1 quintic stream function, so its divergence
vanishes identically. The pressure is then recovered locally. Bubble tests
on each triangle give the non-sting part; vertex patches give the sting
coefficients, and edge-pair tests fix one constant per triangle.
"""

import numpy as np

from stingstokes import AnalyticLoad, error_norms, generate_crisscross, manufactured_case, solve

case = manufactured_case("trig")
T = generate_crisscross(8, True)
sol = solve(T, AnalyticLoad(T, case.f))

u = sol.velocity
print(f"stream DOFs: {u.space.n_free}")
print(f"max |div u_h| coefficient: {np.abs(u.divergence()).max():.2e}")

comps = sol.components
print(f"non-sting part, largest coefficient: {np.abs(comps.nonsting).max():.3e}")
print(f"sting coefficients, largest: {np.abs(comps.sting).max():.3e}")
print(f"triangle constants span [{comps.constants.min():.3e}, {comps.constants.max():.3e}]")
print(f"mean of p_h: {sol.pressure.integral():.2e}")

eu, ep = error_norms(T, case, u, sol.pressure)
print(f"|u - u_h|_1 = {eu:.4e}, ||p - p_h||_0 = {ep:.4e}")
