# %% [markdown]
# # BR2 and SIPG penalties
#
# Both penalty families satisfy the adjoint-consistency conditions. BR2
# meets the interface stability condition with equality (its Schur
# complement is zero), SIPG bounds the same Gram matrix by its largest
# eigenvalue and therefore has slack. Scaling the penalties by a relaxation
# factor below one eventually destroys definiteness.

# %%
import numpy as np

from sbpsat.analysis import condition_number, relaxation_scan
from sbpsat.discretization import (
    Discretization, assemble, verify_adjoint_conditions, verify_stability_conditions)
from sbpsat.mesh import element_angles, perturb_mesh, structured_mesh
from sbpsat.problems import MANUFACTURED as prob
from sbpsat.sbp import sbp_operator

mesh = perturb_mesh(structured_mesh(8), 0.45, seed=2024)
print(f"perturbed 8x8 mesh, largest angle {element_angles(mesh).max():.1f} deg")

disc = Discretization(mesh, sbp_operator("gamma", 2), prob.diffusion)
for sch in ("br2", "sipg"):
    coeffs = disc.sat_coefficients(sch)
    adj = verify_adjoint_conditions(disc, coeffs)
    stab = verify_stability_conditions(disc, coeffs)
    print(f"{sch}: adjoint conditions {adj.passed}, stability {stab.passed}, "
          f"interface margin {stab.details['interface_margin']:.2e}")

# %% [markdown]
# ## Conditioning and the relaxation threshold
#
# SIPG penalties are larger, so they give a stiffer matrix but tolerate
# more relaxation; BR2 loses definiteness at a larger factor.

# %%
for sch in ("br2", "sipg"):
    system = assemble(disc, disc.sat_coefficients(sch))
    scan = relaxation_scan(lambda a: assemble(disc, disc.sat_coefficients(sch, a)).A,
                           alphas=np.linspace(0.1, 1.0, 10))
    print(f"{sch}: kappa = {condition_number(system):.3e}, "
          f"definite for alpha > {scan.crossing:.3f}")

# %% [markdown]
# The same scan for every family and degree is `python -m sbpsat relaxation
# --out results/`, which also writes one `alpha,min_eig` CSV per case.
