"""Recovery is exact for cubic pressures.

Take any C1 stream function from the discrete space and any global cubic
pressure, and build the load that makes them the discrete solution. The
velocity solve returns the stream function and the local recovery returns
the cubic, to round-off, through all three sting paths.
"""

import numpy as np

from stingstokes import (
    ArgyrisSpace, classify_vertices, generate_crisscross, recover_pressure, solve_stokes_velocity,
)
from stingstokes import polytri as pt
from stingstokes.velocity import stream_reference_load

rng = np.random.default_rng(0)
T = generate_crisscross(6, True)
S = ArgyrisSpace(T)
stream = rng.standard_normal(S.n_free)

# a random global cubic, sampled on each triangle's lattice
X = pt.physical_points(T.coords, pt.lattice(3))
c = rng.standard_normal(10)
exps = [(a, b) for a in range(4) for b in range(4 - a)]
vals = sum(ci * X[..., 0] ** a * X[..., 1] ** b for ci, (a, b) in zip(c, exps))
pc = vals @ pt.lattice_inverse(3).T
pc -= np.sum(pt.integrate(pc, 3, T.areas)) / T.areas.sum() * pt.constant(3)

load = stream_reference_load(S, stream, pc)
u = solve_stokes_velocity(T, load, S)
p, comps = recover_pressure(T, u, load, classify_vertices(T))

d = p.coeffs - pc
print(f"stream coefficients recovered to {np.abs(u.stream.coeffs - stream).max():.2e}")
print(f"||p* - p_h||_0 = {np.sqrt(np.sum(pt.inner(d, 3, d, 3, T.areas))):.2e}")
