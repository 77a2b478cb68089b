"""Regenerate the frozen volume cubature tables in ``src/sbpsat/data``.

Rules with free orbit parameters are not unique; the generator selects the
admissible rule whose SBP gradient operator ``[D_x; D_y]`` has the smallest
spectral norm, since that norm drives the stiffness of the assembled
systems. Run from the repository root::

    python3 tools/generate_cubature_tables.py
"""

import pathlib

import numpy as np

from sbpsat.reference import (
    DEGREES, FAMILIES, monomial_exponents, monomial_matrix, optimize_rule,
    simplex_moment, write_cubature_table)
from sbpsat.sbp import build_sbp_operator, ConstructionError

DATA = pathlib.Path(__file__).resolve().parents[1] / "src" / "sbpsat" / "data"


def gradient_norm(cub):
    try:
        op = build_sbp_operator(cub)
    except ConstructionError:
        return np.inf
    return np.linalg.norm(np.vstack([op.Dx, op.Dy]), 2)


def main():
    for family in FAMILIES:
        for p in DEGREES:
            cub = optimize_rule(family, p, gradient_norm)
            exact = np.array([float(simplex_moment(a, b))
                              for a, b in monomial_exponents(cub.degree)])
            err = np.max(np.abs(monomial_matrix(cub.points, cub.degree).T @ cub.weights - exact))
            print(f"{family:5s} p={p} nodes={cub.size:2d} degree={cub.degree} "
                  f"min w={cub.weights.min():.3e} moment err={err:.1e} "
                  f"|D|={gradient_norm(cub):.3f}", flush=True)
            with open(DATA / f"{family}_p{p}.txt", "w") as f:
                write_cubature_table(f, cub)


if __name__ == "__main__":
    main()
