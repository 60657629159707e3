"""
Conformal regularization of a distorted mesh
============================================

Tangential noise leaves the shape of a sphere intact but spoils its
triangles.  One regularization step moves vertices (almost) tangentially so
that each triangle approaches its target angles.
"""

# %%
import numpy as np

from pwillmore import shapes
from pwillmore.geometry import enclosed_volume
from pwillmore.mesh import face_quality
from pwillmore.regularize import RegularizeConfig, regularize

m = shapes.jitter_tangential(shapes.icosphere(3), 0.3, rng=0, project_radius=1.0)
print(f"jittered icosphere: min quality {face_quality(m).min():.3f}")

# %%
# ``linear`` uses the normal of the current mesh; ``nonlinear`` continues
# with Newton iterations that use the average of the old and new normals.
#
# Eliminating rho leaves CD(u + v) - (1/2 eps) int <v, N>^2, which is
# indefinite.  Small eps pins the normal motion and large eps releases it,
# but some intermediate values sit close to a singular system.  The solve
# then blows up, the safeguard sees CD rise and the input mesh is returned
# with a warning (eps = 1e-2 below).
for mode in ("linear", "nonlinear"):
    for eps in (1e-5, 1e-2, 1.0):
        res = regularize(m, RegularizeConfig(mode=mode, epsilon=eps))
        dv = enclosed_volume(res.mesh) / enclosed_volume(m) - 1
        r = np.linalg.norm(res.mesh.vertices, axis=1)
        print(
            f"{mode:9s} eps={eps:<6g} CD {res.cd_before:.4f} -> {res.cd_after:.4f}"
            f"  quality {face_quality(res.mesh).min():.3f}"
            f"  |r-1| max {np.abs(r - 1).max():.1e}  volume {dv:+.1e}"
        )

# %%
# Larger epsilon weakens the normal constraint; the multiplier shrinks.
for eps in (1e-5, 1e-2, 1.0, 1e2):
    res = regularize(m, RegularizeConfig(epsilon=eps))
    print(f"eps={eps:<6g} |rho| = {np.linalg.norm(res.rho):.3e}")
