# %% [markdown]
# # SBP operators on the reference triangle
#
# Each operator family pairs a symmetric cubature rule with a diagonal norm
# `H`, a skew part `S` and face interpolation `R`. The Omega family keeps
# every node strictly inside the element; the Gamma family puts `p + 1`
# nodes on each face, so its traces are plain 1D Lagrange interpolants.

# %%
import numpy as np

from sbpsat.reference import DEGREES, FAMILIES, volume_cubature
from sbpsat.sbp import sbp_operator, verify_sbp

for fam in FAMILIES:
    for p in DEGREES:
        op = sbp_operator(fam, p)
        rep = verify_sbp(op)
        dnorm = np.linalg.norm(np.vstack([op.Dx, op.Dy]), 2)
        print(f"{fam:6s} p={p}  nodes={op.n:2d}  rule degree={op.cubature.degree}"
              f"  ||D||={dnorm:6.2f}  verified={rep.passed}")

# %% [markdown]
# ## Integration by parts, discretely
#
# For any nodal vectors `u, v` the operator satisfies
# `u^T H Dx v + v^T H Dx u = u^T Ex v`; the boundary matrix `Ex` is the sum
# of face contributions `R^T N_x B R`.

# %%
op = sbp_operator("gamma", 3)
rng = np.random.default_rng(0)
u, v = rng.standard_normal((2, op.n))
lhs = u @ (op.h * (op.Dx @ v)) + v @ (op.h * (op.Dx @ u))
print("integration by parts defect:", abs(lhs - u @ op.Ex @ v))

# %% [markdown]
# Derivatives of polynomials up to degree `p` are exact at the nodes.

# %%
x, y = op.points.T
print("max |Dx x^3 - 3x^2| =", np.abs(op.Dx @ x**3 - 3 * x**2).max())
print("face 0 trace of y (should vanish):", np.abs(op.faces[0].R @ y).max())

# %% [markdown]
# The Gamma rule of degree 2 has seven nodes: three vertices, three edge
# midpoints and the centroid.

# %%
cub = volume_cubature("gamma", 2)
for (px, py), w in zip(cub.points, cub.weights):
    print(f"  ({px:.4f}, {py:.4f})  w = {w:.6f}")
