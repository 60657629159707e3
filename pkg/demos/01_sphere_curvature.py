"""
Curvature of a round sphere
===========================

The mean curvature vector of the unit sphere has length 2 everywhere, so
the scaled energy ``int |Y|^2`` is 16 pi.  Here we watch the discrete value
approach that number as the icosphere is refined.
"""

# %%
import numpy as np

from pwillmore import shapes
from pwillmore.geometry import mean_curvature_vector, p_willmore_energy, surface_area

# %%
# ``mean_curvature_vector`` solves the mass-matrix system ``M Y = -K u`` once
# for every coordinate.  On a sphere Y points inward.
print(f"{'level':>5} {'faces':>7} {'area/4pi':>10} {'median |Y|':>11} {'E/16pi':>10}")
for level in range(1, 6):
    m = shapes.icosphere(level)
    Y = mean_curvature_vector(m)
    E = p_willmore_energy(m, Y, 2)
    print(
        f"{level:5d} {m.n_faces:7d} {surface_area(m) / (4 * np.pi):10.6f}"
        f" {np.median(np.linalg.norm(Y, axis=1)):11.6f} {E / (16 * np.pi):10.6f}"
    )

# %%
# Other powers: ``int |Y|`` is 8 pi on the unit sphere and ``int |Y|^4`` is
# 64 pi.
m = shapes.icosphere(4)
Y = mean_curvature_vector(m)
for p, exact in [(1, 8 * np.pi), (4, 64 * np.pi)]:
    print(f"p={p}: E / exact = {p_willmore_energy(m, Y, p) / exact:.5f}")
