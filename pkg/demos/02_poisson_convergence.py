# %% [markdown]
# # Manufactured-solution convergence
#
# We solve `-div(Lambda grad u) = F` on the unit square with
# `Lambda = [[x^2+1, xy], [xy, y^2+1]]` and `u = sin(2 pi x) sin(2 pi y)`,
# measuring the L2 error and the error of the functional `int u dx`
# (exact value zero). Solutions converge like `h^(p+1)`; the adjoint-
# consistent functional converges like `h^(2p)`.
#
# The full study uses `K = 128 ... 8192` elements
# (`python -m sbpsat convergence`); here a coarser sequence keeps the run
# short.

# %%
import numpy as np

from sbpsat.analysis import convergence_rate, l2_error, solve_steady
from sbpsat.discretization import Discretization, assemble, functional
from sbpsat.mesh import structured_mesh
from sbpsat.problems import MANUFACTURED as prob
from sbpsat.sbp import sbp_operator

levels = (8, 16, 32)
for fam in ("omega", "gamma"):
    for p in (1, 2):
        op = sbp_operator(fam, p)
        h, eu, ej = [], [], []
        for N in levels:
            disc = Discretization(structured_mesh(N), op, prob.diffusion)
            coeffs = disc.sat_coefficients("br2")
            u = solve_steady(assemble(disc, coeffs, forcing=prob.forcing))
            h.append(disc.mesh.h)
            eu.append(l2_error(disc, u, prob.exact))
            ej.append(abs(functional(disc, coeffs, u, g=lambda x, y: 1.0)))
        print(f"{fam:6s} p={p}: L2 slope {convergence_rate(eu, h).slope:.2f} "
              f"(expect {p + 1}), functional slope {convergence_rate(ej, h).slope:.2f} "
              f"(expect {2 * p})")

# %% [markdown]
# ## Polynomial exactness
#
# With a linear tensor and a degree-`p` solution, the discrete residual of
# the exact nodal values vanishes to roundoff, on any mesh.

# %%
from sbpsat.mesh import perturb_mesh
from sbpsat.problems import polynomial_problem

mesh = perturb_mesh(structured_mesh(4), 0.45, seed=2024)
poly = polynomial_problem(3)
disc = Discretization(mesh, sbp_operator("omega", 3), poly.diffusion)
system = assemble(disc, disc.sat_coefficients("sipg"), forcing=poly.forcing,
                  dirichlet=poly.dirichlet)
u = poly.exact(disc.x[..., 0], disc.x[..., 1]).ravel()
print("max |A u - b| for the exact cubic:", np.abs(system.A @ u - system.b).max())
