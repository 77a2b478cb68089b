"""
Diagonal-norm SBP first-derivative operators on the reference triangle.

An operator of degree ``p`` consists of the norm ``H`` (cubature weights),
``Q_x = S_x + E_x / 2`` and ``Q_y = S_y + E_y / 2``, where the boundary
matrices are assembled face by face from extrapolation operators ``R``,

.. math::

    E_x = \\sum_\\gamma R_\\gamma^T N_{x,\\gamma} B_\\gamma R_\\gamma,

and the skew parts are the minimum-norm solutions of the accuracy equations
``S_x V = H V_x - E_x V / 2`` on the degree-``p`` Vandermonde ``V``.

.. autofunction:: build_face_interpolation
.. autofunction:: build_boundary_matrices
.. autofunction:: build_sbp_operator
.. autofunction:: sbp_operator
.. autofunction:: verify_sbp
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import factorial

import numpy as np

from sbpsat.errors import ConstructionError
from sbpsat.reference import (
    REFERENCE, BasisEvaluator, FaceCubature, VolumeCubature, evaluate_basis,
    evaluate_basis_gradient, face_cubature, monomial_exponents, monomial_matrix,
    volume_cubature, _monomial_gradients)

#: distance below which a volume node is considered to lie on a face
FACE_NODE_TOL = 1.0e-10


@dataclass(frozen=True)
class FaceOperatorBundle:
    face: int
    R: np.ndarray
    #: reference face weights (edge rule scaled by reference face length)
    b: np.ndarray
    nx: np.ndarray
    ny: np.ndarray
    #: interpolation degree
    r: int
    points: np.ndarray

    @property
    def B(self) -> np.ndarray:
        return np.diag(self.b)

    @property
    def Nx(self) -> np.ndarray:
        return np.diag(self.nx)

    @property
    def Ny(self) -> np.ndarray:
        return np.diag(self.ny)


@dataclass(frozen=True)
class SbpOperator:
    family: str
    p: int
    cubature: VolumeCubature
    face_rule: FaceCubature
    Sx: np.ndarray
    Sy: np.ndarray
    Ex: np.ndarray
    Ey: np.ndarray
    faces: tuple[FaceOperatorBundle, ...]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.cubature.size

    @property
    def h(self) -> np.ndarray:
        """Diagonal of the norm matrix."""
        return self.cubature.weights

    @property
    def H(self) -> np.ndarray:
        return np.diag(self.cubature.weights)

    @property
    def points(self) -> np.ndarray:
        return self.cubature.points

    @property
    def Qx(self) -> np.ndarray:
        return self.Sx + 0.5 * self.Ex

    @property
    def Qy(self) -> np.ndarray:
        return self.Sy + 0.5 * self.Ey

    @property
    def Dx(self) -> np.ndarray:
        if "Dx" not in self._cache:
            self._cache["Dx"] = self.Qx / self.h[:, None]
        return self._cache["Dx"]

    @property
    def Dy(self) -> np.ndarray:
        if "Dy" not in self._cache:
            self._cache["Dy"] = self.Qy / self.h[:, None]
        return self._cache["Dy"]


# {{{ construction

def _face_node_parameters(points: np.ndarray, face: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices of *points* lying on *face* and their edge parameters."""
    a, _ = REFERENCE.faces[face]
    origin = REFERENCE.vertices[a]
    vec = REFERENCE.face_vector(face)
    length2 = vec @ vec
    rel = points - origin
    t = rel @ vec / length2
    dist = np.abs(rel[:, 0] * vec[1] - rel[:, 1] * vec[0]) / np.sqrt(length2)
    on_face = (dist < FACE_NODE_TOL) & (t > -FACE_NODE_TOL) & (t < 1 + FACE_NODE_TOL)
    idx = np.flatnonzero(on_face)
    return idx, t[idx]


def build_face_interpolation(cub: VolumeCubature, face: FaceCubature,
                             face_index: int, family: str | None = None
                             ) -> FaceOperatorBundle:
    """Degree-``p`` interpolation/extrapolation from volume to face nodes.

    For the ``gamma`` family only the ``p + 1`` nodes on the face are used
    (one-dimensional Lagrange interpolation along the edge); otherwise the
    minimum-norm solution of the exactness conditions in the ``H^{-1}``
    metric is returned.
    """
    family = cub.family if family is None else family
    if face.p != cub.p:
        raise ConstructionError(
            f"volume rule has degree {cub.p} but face rule has degree {face.p}")
    p = cub.p
    n = cub.size
    fpts = REFERENCE.face_points(face_index, face.points)

    if family == "gamma":
        idx, t_nodes = _face_node_parameters(cub.points, face_index)
        if len(idx) != p + 1:
            raise ConstructionError(
                f"face {face_index} holds {len(idx)} volume nodes, expected {p + 1}")
        R = np.zeros((face.size, n))
        for k, i in enumerate(idx):
            others = np.delete(t_nodes, k)
            R[:, i] = np.prod((face.points[:, None] - others[None, :])
                              / (t_nodes[k] - others[None, :]), axis=1)
    else:
        basis = BasisEvaluator(p)
        V = evaluate_basis(basis, cub.points)
        Vf = evaluate_basis(basis, fpts)
        gram = V.T @ (cub.weights[:, None] * V)
        if np.linalg.matrix_rank(gram) < basis.size:
            raise ConstructionError(f"Vandermonde matrix of ({family}, {p}) is rank deficient")
        R = Vf @ np.linalg.solve(gram, V.T * cub.weights[None, :])

    length = REFERENCE.face_length(face_index)
    normal = REFERENCE.face_normal(face_index)
    ones = np.ones(face.size)
    return FaceOperatorBundle(face=face_index, R=R, b=face.weights * length,
                              nx=normal[0] * ones, ny=normal[1] * ones,
                              r=p, points=fpts)


def build_boundary_matrices(bundles) -> tuple[np.ndarray, np.ndarray]:
    Ex = sum(f.R.T @ ((f.nx * f.b)[:, None] * f.R) for f in bundles)
    Ey = sum(f.R.T @ ((f.ny * f.b)[:, None] * f.R) for f in bundles)
    return Ex, Ey


def _solve_skew(V: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Minimum-norm skew-symmetric ``S`` with ``S V = W``."""
    n, m = V.shape
    rows, cols = np.tril_indices(n, -1)
    # (S V)[a, b] = sum_j S[a, j] V[j, b], S = sum s_ij (e_i e_j^T - e_j e_i^T)
    A = np.zeros((n, m, len(rows)))
    for k, (i, j) in enumerate(zip(rows, cols)):
        A[i, :, k] += V[j, :]
        A[j, :, k] -= V[i, :]
    A = A.reshape(n * m, -1)
    s, *_ = np.linalg.lstsq(A, W.ravel(), rcond=None)
    S = np.zeros((n, n))
    S[rows, cols] = s
    S -= S.T

    residual = np.abs(S @ V - W)
    if residual.max() > 1.0e-8:
        col = int(np.argmax(residual.max(axis=0)))
        raise ConstructionError(
            f"accuracy equations are inconsistent for basis function {col} "
            f"(residual {residual.max():.2e})")
    return S


def build_sbp_operator(cub: VolumeCubature, face: FaceCubature | None = None
                       ) -> SbpOperator:
    face = face_cubature(cub.p) if face is None else face
    bundles = tuple(build_face_interpolation(cub, face, i) for i in range(3))
    Ex, Ey = build_boundary_matrices(bundles)
    # exact symmetry; the products above may differ by roundoff
    Ex = 0.5 * (Ex + Ex.T)
    Ey = 0.5 * (Ey + Ey.T)

    basis = BasisEvaluator(cub.p)
    V = evaluate_basis(basis, cub.points)
    Vx, Vy = evaluate_basis_gradient(basis, cub.points)
    h = cub.weights[:, None]
    Sx = _solve_skew(V, h * Vx - 0.5 * Ex @ V)
    Sy = _solve_skew(V, h * Vy - 0.5 * Ey @ V)
    return SbpOperator(family=cub.family, p=cub.p, cubature=cub, face_rule=face,
                       Sx=Sx, Sy=Sy, Ex=Ex, Ey=Ey, faces=bundles)


@lru_cache(maxsize=None)
def sbp_operator(family: str, p: int) -> SbpOperator:
    """Cached operator built from the tabulated rule of (family, p)."""
    return build_sbp_operator(volume_cubature(family, p))

# }}}


# {{{ verification

def _edge_moment(a: int, b: int, component: int) -> Fraction:
    r"""Exact :math:`\oint x^a y^b n_c \,d\Gamma` over the reference boundary."""
    beta = Fraction(factorial(a) * factorial(b), factorial(a + b + 1))
    if component == 0:
        # hypotenuse: n_x ds = dt; face x = 0: n_x = -1
        return beta - (Fraction(1, b + 1) if a == 0 else 0)
    return beta - (Fraction(1, a + 1) if b == 0 else 0)


@dataclass(frozen=True)
class Check:
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)


@dataclass
class SbpReport:
    family: str
    p: int
    checks: dict[str, Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failures(self) -> list[str]:
        return [name for name, c in self.checks.items() if not c.passed]

    def as_dict(self) -> dict:
        return {"family": self.family, "p": self.p, "passed": self.passed,
                "checks": {k: {"value": c.value, "tol": c.tol, "passed": c.passed}
                           for k, c in self.checks.items()}}


def verify_sbp(op: SbpOperator, *, tol: float = 1.0e-10) -> SbpReport:
    """Check every defining property of a diagonal-norm SBP operator."""
    pts = op.points
    h = op.h
    P = monomial_matrix(pts, op.p)
    Px, Py = _monomial_gradients(pts, op.p)
    Dx = op.Qx / h[:, None]
    Dy = op.Qy / h[:, None]
    accuracy = max(np.abs(Dx @ P - Px).max(), np.abs(Dy @ P - Py).max())

    skew = max(np.abs(op.Sx + op.Sx.T).max(), np.abs(op.Sy + op.Sy.T).max())
    sym = max(np.abs(op.Ex - op.Ex.T).max(), np.abs(op.Ey - op.Ey.T).max())
    Ex, Ey = build_boundary_matrices(op.faces)
    decomp = max(np.abs(op.Ex - Ex).max(), np.abs(op.Ey - Ey).max())

    r = min(f.r for f in op.faces)
    exps = monomial_exponents(r)
    Pr = monomial_matrix(pts, r)
    exact_x = np.array([[float(_edge_moment(a1 + a2, b1 + b2, 0)) for a2, b2 in exps]
                        for a1, b1 in exps])
    exact_y = np.array([[float(_edge_moment(a1 + a2, b1 + b2, 1)) for a2, b2 in exps]
                        for a1, b1 in exps])
    boundary = max(np.abs(Pr.T @ op.Ex @ Pr - exact_x).max(),
                   np.abs(Pr.T @ op.Ey @ Pr - exact_y).max())

    interp = max(np.abs(f.R @ P - monomial_matrix(f.points, op.p)).max()
                 for f in op.faces)

    checks = {
        "accuracy": Check(float(accuracy), tol),
        "skew": Check(float(skew), 1.0e-14),
        "boundary_symmetry": Check(float(sym), 1.0e-14),
        "decomposition": Check(float(decomp), 1.0e-14),
        "boundary_integral": Check(float(boundary), tol),
        "interpolation": Check(float(interp), tol),
        "norm_positive": Check(0.0 if h.min() > 0 else float("inf"), 0.0),
    }
    return SbpReport(family=op.family, p=op.p, checks=checks)

# }}}


# {{{ plain-text archive

def _write_matrix(stream, name: str, A: np.ndarray) -> None:
    A = np.atleast_2d(A)
    stream.write(f"matrix {name} {A.shape[0]} {A.shape[1]}\n")
    for row in A:
        stream.write(" ".join(f"{v:.17e}" for v in row) + "\n")


def dump_operator(op: SbpOperator) -> str:
    """Serialize *op* to the plain-text operator archive format."""
    body = io.StringIO()
    _write_matrix(body, "points", op.points)
    _write_matrix(body, "weights", op.h[None, :])
    _write_matrix(body, "face_points", op.face_rule.points[None, :])
    _write_matrix(body, "face_weights", op.face_rule.weights[None, :])
    _write_matrix(body, "Sx", op.Sx)
    _write_matrix(body, "Sy", op.Sy)
    for f in op.faces:
        _write_matrix(body, f"R{f.face}", f.R)
    payload = body.getvalue()
    digest = hashlib.sha256(payload.encode()).hexdigest()
    header = (f"# sbpsat operator archive\nversion 1\nfamily {op.family}\n"
              f"p {op.p}\nnodes {op.n}\ndegree {op.cubature.degree}\nsha256 {digest}\n")
    return header + payload


def load_operator(text: str) -> SbpOperator:
    """Inverse of :func:`dump_operator`; the result is re-verified."""
    lines = text.splitlines()
    header: dict[str, str] = {}
    mats: dict[str, np.ndarray] = {}
    i = 0
    while i < len(lines) and not lines[i].startswith("matrix"):
        line = lines[i].strip()
        if line and not line.startswith("#"):
            key, value = line.split(maxsplit=1)
            header[key] = value
        i += 1
    payload = "\n".join(lines[i:]) + "\n"
    if hashlib.sha256(payload.encode()).hexdigest() != header.get("sha256"):
        raise ConstructionError("operator archive checksum mismatch")
    while i < len(lines):
        _, name, nr, nc = lines[i].split()
        nr, nc = int(nr), int(nc)
        mats[name] = np.array([[float(v) for v in lines[i + 1 + k].split()]
                               for k in range(nr)]).reshape(nr, nc)
        i += 1 + nr

    family, p = header["family"], int(header["p"])
    if int(header["nodes"]) != len(mats["weights"][0]):
        raise ConstructionError("operator archive node count mismatch")
    cub = VolumeCubature(family=family, p=p, degree=int(header["degree"]),
                         points=mats["points"], weights=mats["weights"][0])
    face = FaceCubature(p=p, degree=2 * p + 1, points=mats["face_points"][0],
                        weights=mats["face_weights"][0])
    bundles = []
    for k in range(3):
        length = REFERENCE.face_length(k)
        normal = REFERENCE.face_normal(k)
        ones = np.ones(face.size)
        bundles.append(FaceOperatorBundle(
            face=k, R=mats[f"R{k}"], b=face.weights * length, nx=normal[0] * ones,
            ny=normal[1] * ones, r=p, points=REFERENCE.face_points(k, face.points)))
    Ex, Ey = build_boundary_matrices(bundles)
    op = SbpOperator(family=family, p=p, cubature=cub, face_rule=face,
                     Sx=mats["Sx"], Sy=mats["Sy"], Ex=0.5 * (Ex + Ex.T),
                     Ey=0.5 * (Ey + Ey.T), faces=tuple(bundles))
    report = verify_sbp(op)
    if not report.passed:
        raise ConstructionError(
            f"loaded operator fails verification: {', '.join(report.failures())}")
    return op

# }}}

# vim: foldmethod=marker
