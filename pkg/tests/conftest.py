import numpy as np
import pytest

from sbpsat.mesh import perturb_mesh, structured_mesh
from sbpsat.reference import DEGREES, FAMILIES

CASES = [(fam, p) for fam in FAMILIES for p in DEGREES]


def two_element_mesh(rng, spread: float = 0.35):
    """Unit square split along its diagonal, then an affine map and a
    random interior shift of the shared diagonal's endpoints."""
    mesh = structured_mesh(1)
    A = np.eye(2) + rng.uniform(-spread, spread, (2, 2))
    if np.linalg.det(A) <= 0.2:
        A = np.eye(2)
    verts = mesh.vertices @ A.T + rng.uniform(-1.0, 1.0, 2)
    verts[[0, 3]] += rng.uniform(-0.1, 0.1, (2, 2))
    from dataclasses import replace
    out = replace(mesh, vertices=verts)
    if np.any(out.signed_areas() <= 0.05 * abs(np.linalg.det(A))):
        return two_element_mesh(rng, spread)
    return out


@pytest.fixture(scope="session")
def small_perturbed_mesh():
    return perturb_mesh(structured_mesh(4), 0.3, seed=11)
