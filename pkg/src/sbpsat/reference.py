"""
Reference triangle, orthonormal polynomial basis and cubature rules.

The reference element is the simplex with vertices ``(0,0), (1,0), (0,1)``.
Local face ``i`` joins vertex ``i`` to vertex ``(i+1) % 3``, so the faces are
traversed counterclockwise and the outward normal of a face with direction
``(dx, dy)`` is ``(dy, -dx) / length``.

Two families of volume rules are provided:

* ``"omega"``: strictly interior nodes, as many nodes as there are
  polynomials of total degree ``p``;
* ``"gamma"``: ``p + 1`` nodes on every face (vertices included).

The node tables live in ``sbpsat/data`` and were produced by
:func:`solve_symmetric_rule`; they are re-validated against exact simplex
moments by the test suite.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.optimize import least_squares

from sbpsat.errors import ConfigurationError, DomainError

FAMILIES = ("omega", "gamma")
DEGREES = (1, 2, 3, 4)

#: Node counts per family for p = 1..4.
NODE_COUNTS = {"omega": (3, 6, 10, 15), "gamma": (3, 7, 12, 18)}

_FILE_FORMAT_VERSION = 1


# {{{ reference element

@dataclass(frozen=True)
class ReferenceTriangle:
    vertices: np.ndarray = field(
        default_factory=lambda: np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    faces: tuple[tuple[int, int], ...] = ((0, 1), (1, 2), (2, 0))

    @property
    def area(self) -> float:
        (x0, y0), (x1, y1), (x2, y2) = self.vertices
        return 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))

    def face_vector(self, face: int) -> np.ndarray:
        a, b = self.faces[face]
        return self.vertices[b] - self.vertices[a]

    def face_length(self, face: int) -> float:
        return float(np.hypot(*self.face_vector(face)))

    def face_normal(self, face: int) -> np.ndarray:
        dx, dy = self.face_vector(face)
        return np.array([dy, -dx]) / np.hypot(dx, dy)

    def face_points(self, face: int, t: np.ndarray) -> np.ndarray:
        """Map edge parameters ``t`` in [0, 1] onto face *face*."""
        a, _ = self.faces[face]
        t = np.asarray(t, dtype=float)
        return self.vertices[a] + t[:, None] * self.face_vector(face)

    def barycentric(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        x, y = points[:, 0], points[:, 1]
        return np.stack([1.0 - x - y, x, y], axis=1)


REFERENCE = ReferenceTriangle()

# }}}


# {{{ exact moments and monomials

def monomial_exponents(p: int) -> list[tuple[int, int]]:
    """Exponents ``(a, b)`` of ``x^a y^b`` ordered by graded total degree."""
    return [(k - j, j) for k in range(p + 1) for j in range(k + 1)]


def simplex_moment(a: int, b: int) -> Fraction:
    r"""Exact :math:`\int x^a y^b` over the reference triangle."""
    return Fraction(math.factorial(a) * math.factorial(b), math.factorial(a + b + 2))


def monomial_matrix(points: np.ndarray, p: int) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = points[:, 0], points[:, 1]
    return np.stack([x**a * y**b for a, b in monomial_exponents(p)], axis=1)


def _monomial_gradients(points: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = points[:, 0], points[:, 1]
    mx, my = [], []
    for a, b in monomial_exponents(p):
        mx.append(a * x ** max(a - 1, 0) * y**b if a > 0 else np.zeros_like(x))
        my.append(b * x**a * y ** max(b - 1, 0) if b > 0 else np.zeros_like(x))
    return np.stack(mx, axis=1), np.stack(my, axis=1)

# }}}


# {{{ orthonormal basis

@lru_cache(maxsize=None)
def _orthonormal_coefficients(p: int) -> np.ndarray:
    # exact rational LDL^T of the monomial Gram matrix; only the final
    # D^{-1/2} scaling is done in floating point
    exps = monomial_exponents(p)
    m = len(exps)
    gram = [[simplex_moment(a1 + a2, b1 + b2) for (a2, b2) in exps] for (a1, b1) in exps]

    lower = [[Fraction(int(i == j)) for j in range(m)] for i in range(m)]
    diag = [Fraction(0)] * m
    for j in range(m):
        diag[j] = gram[j][j] - sum(lower[j][k] ** 2 * diag[k] for k in range(j))
        for i in range(j + 1, m):
            lower[i][j] = (gram[i][j] - sum(
                lower[i][k] * lower[j][k] * diag[k] for k in range(j))) / diag[j]

    # inverse of the unit lower-triangular factor, exactly
    inv = [[Fraction(int(i == j)) for j in range(m)] for i in range(m)]
    for i in range(m):
        for j in range(i):
            inv[i][j] = -sum(lower[i][k] * inv[k][j] for k in range(j, i))

    coeffs = np.array([[float(inv[j][i]) for j in range(m)] for i in range(m)])
    coeffs /= np.sqrt(np.array([float(d) for d in diag]))[None, :]
    coeffs.setflags(write=False)
    return coeffs


@dataclass(frozen=True)
class BasisEvaluator:
    """Orthonormal basis of total-degree-``p`` polynomials on the reference
    triangle, obtained by orthonormalizing graded monomials.
    """

    p: int

    def __post_init__(self):
        if self.p < 0:
            raise ConfigurationError(f"basis degree must be nonnegative, got {self.p}")

    @property
    def size(self) -> int:
        return (self.p + 1) * (self.p + 2) // 2

    @property
    def coefficients(self) -> np.ndarray:
        """Monomial coefficients, column ``j`` holds basis function ``j``."""
        return _orthonormal_coefficients(self.p)


def _check_inside(points: np.ndarray, tol: float = 1.0e-12) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != 2:
        raise DomainError(f"expected 2D points, got shape {points.shape}")
    lam = REFERENCE.barycentric(points)
    if np.any(lam < -tol):
        bad = points[np.any(lam < -tol, axis=1)][0]
        raise DomainError(f"point {bad} lies outside the reference triangle")
    return points


def evaluate_basis(basis: BasisEvaluator, points: np.ndarray) -> np.ndarray:
    """Vandermonde matrix ``V[i, j] = phi_j(points[i])``."""
    points = _check_inside(points)
    return monomial_matrix(points, basis.p) @ basis.coefficients


def evaluate_basis_gradient(basis: BasisEvaluator, points: np.ndarray
                            ) -> tuple[np.ndarray, np.ndarray]:
    points = _check_inside(points)
    mx, my = _monomial_gradients(points, basis.p)
    return mx @ basis.coefficients, my @ basis.coefficients

# }}}


# {{{ cubature rules

@dataclass(frozen=True)
class VolumeCubature:
    family: str
    p: int
    degree: int
    points: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return len(self.weights)

    def integrate(self, values: np.ndarray) -> float:
        return float(self.weights @ values)


@dataclass(frozen=True)
class FaceCubature:
    """Rule on the unit edge parameter ``t in [0, 1]``; weights sum to 1 and
    must be scaled by the face length for a specific face."""

    p: int
    degree: int
    points: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return len(self.weights)


def face_cubature(p: int) -> FaceCubature:
    """``p + 1`` Legendre-Gauss points, exact to degree ``2p + 1``."""
    if p not in DEGREES:
        raise ConfigurationError(f"face cubature supports p in {DEGREES}, got {p}")
    s, w = np.polynomial.legendre.leggauss(p + 1)
    t = 0.5 * (s + 1.0)
    wt = 0.5 * w
    # exact mirror symmetry so that the neighbour traversal is a pure reversal
    t = 0.5 * (t + (1.0 - t[::-1]))
    wt = 0.5 * (wt + wt[::-1])
    return FaceCubature(p=p, degree=2 * p + 1, points=t, weights=wt)


def collapsed_cubature(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss rule on the collapsed square, exact for total degree
    *degree*. Independent of the tabulated rules; used as an oracle."""
    n = degree // 2 + 2
    s, w = np.polynomial.legendre.leggauss(n)
    s, w = 0.5 * (s + 1.0), 0.5 * w
    u, v = np.meshgrid(s, s, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    x = (u * (1.0 - v)).ravel()
    y = v.ravel()
    weights = (wu * wv * (1.0 - v)).ravel()
    return np.stack([x, y], axis=1), weights


def _data_path(family: str, p: int):
    return resources.files("sbpsat") / "data" / f"{family}_p{p}.txt"


def write_cubature_table(stream, cub: VolumeCubature) -> None:
    stream.write("# sbpsat volume cubature table\n")
    stream.write(f"version {_FILE_FORMAT_VERSION}\n")
    stream.write(f"family {cub.family}\n")
    stream.write(f"p {cub.p}\n")
    stream.write(f"degree {cub.degree}\n")
    stream.write(f"nodes {cub.size}\n")
    stream.write("x y w\n")
    for (x, y), w in zip(cub.points, cub.weights):
        stream.write(f"{x:.17e} {y:.17e} {w:.17e}\n")


def read_cubature_table(text: str) -> VolumeCubature:
    header: dict[str, str] = {}
    rows = []
    in_body = False
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if in_body:
            rows.append([float(v) for v in line.split()])
        elif line == "x y w":
            in_body = True
        else:
            key, value = line.split(maxsplit=1)
            header[key] = value

    try:
        version = int(header["version"])
        family = header["family"]
        p = int(header["p"])
        degree = int(header["degree"])
        nodes = int(header["nodes"])
    except KeyError as exc:
        raise ConfigurationError(f"cubature table misses header field {exc}") from None
    if version != _FILE_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported cubature table version {version}")

    data = np.array(rows, dtype=float).reshape(-1, 3)
    if len(data) != nodes:
        raise ConfigurationError(
            f"cubature table declares {nodes} nodes but contains {len(data)}")
    return VolumeCubature(family=family, p=p, degree=degree,
                          points=data[:, :2].copy(), weights=data[:, 2].copy())


@lru_cache(maxsize=None)
def volume_cubature(family: str, p: int) -> VolumeCubature:
    if family not in FAMILIES or p not in DEGREES:
        raise ConfigurationError(
            f"no volume cubature for family={family!r}, p={p!r}")
    cub = read_cubature_table(_data_path(family, p).read_text())
    if cub.family != family or cub.p != p:
        raise ConfigurationError(f"cubature table for ({family}, {p}) is mislabeled")
    cub.points.setflags(write=False)
    cub.weights.setflags(write=False)
    return cub


def required_degree(family: str, p: int) -> int:
    """Polynomial degree the volume rule of (family, p) integrates exactly."""
    if family == "omega" and p <= 2:
        return 2 * p
    return 2 * p - 1

# }}}


# {{{ symmetric orbit construction

# orbit kinds in barycentric coordinates; the number in the tuple is the
# count of free coordinates carried by the orbit
_ORBIT_FREE = {"s3": 0, "vertex": 0, "midpoint": 0, "s21": 1, "edge": 1, "s111": 2}

ORBIT_LAYOUTS = {
    ("omega", 1): ("s21",),
    ("omega", 2): ("s21", "s21"),
    ("omega", 3): ("s3", "s21", "s111"),
    ("omega", 4): ("s21", "s21", "s21", "s111"),
    ("gamma", 1): ("vertex",),
    ("gamma", 2): ("vertex", "midpoint", "s3"),
    ("gamma", 3): ("vertex", "edge", "s21"),
    ("gamma", 4): ("vertex", "midpoint", "edge", "s21", "s21"),
}


def orbit_points(kind: str, params: tuple[float, ...] = ()) -> np.ndarray:
    """Cartesian points of one orbit under the triangle's symmetry group."""
    if kind == "s3":
        bary = [(1 / 3, 1 / 3, 1 / 3)]
    elif kind == "vertex":
        bary = set(itertools.permutations((1.0, 0.0, 0.0)))
    elif kind == "midpoint":
        bary = set(itertools.permutations((0.5, 0.5, 0.0)))
    elif kind == "s21":
        (a,) = params
        bary = set(itertools.permutations((a, a, 1.0 - 2.0 * a)))
    elif kind == "edge":
        (t,) = params
        bary = set(itertools.permutations((t, 1.0 - t, 0.0)))
    elif kind == "s111":
        a, b = params
        bary = set(itertools.permutations((a, b, 1.0 - a - b)))
    else:
        raise ConfigurationError(f"unknown orbit kind {kind!r}")
    bary = np.array(sorted(bary))
    return bary[:, 1:3].copy()


def _orbit_sizes(kind: str) -> int:
    return {"s3": 1, "vertex": 3, "midpoint": 3, "s21": 3, "edge": 6, "s111": 6}[kind]


def _unpack(layout, x):
    pos = len(layout)
    weights = x[:pos]
    params = []
    for kind in layout:
        nfree = _ORBIT_FREE[kind]
        params.append(tuple(x[pos:pos + nfree]))
        pos += nfree
    return weights, params


def _assemble_rule(layout, x):
    weights, params = _unpack(layout, x)
    pts, wts = [], []
    for kind, w, prm in zip(layout, weights, params):
        op = orbit_points(kind, prm)
        pts.append(op)
        wts.append(np.full(len(op), w))
    return np.concatenate(pts), np.concatenate(wts)


def _rule_problem(family: str, p: int):
    """Layout, degree, scaled moment residual and parameter bounds of the
    orbit equations for the (family, p) rule."""
    layout = ORBIT_LAYOUTS[(family, p)]
    degree = required_degree(family, p)
    exps = monomial_exponents(degree)
    exact = np.array([float(simplex_moment(a, b)) for a, b in exps])
    n_nodes = sum(_orbit_sizes(k) for k in layout)
    if n_nodes != NODE_COUNTS[family][p - 1]:
        raise ConfigurationError(f"orbit layout for ({family}, {p}) has {n_nodes} nodes")

    lo, hi = [1e-8] * len(layout), [0.5] * len(layout)
    for kind in layout:
        if kind in ("s21", "edge"):
            lo.append(1e-4)
            hi.append(0.5 - 1e-4)
        elif kind == "s111":
            lo += [1e-4, 1e-4]
            hi += [1.0, 1.0]

    def moments(x):
        pts, wts = _assemble_rule(layout, x)
        return (monomial_matrix(pts, degree).T @ wts - exact) / exact

    def residual(x):
        # keep s111 orbits inside the triangle
        _, params = _unpack(layout, x)
        pen = [max(0.0, a + b - (1.0 - 1e-4)) for kind, prm in zip(layout, params)
               if kind == "s111" for a, b in [prm]]
        return np.concatenate([moments(x), np.array(pen) * 1e3])

    return layout, degree, moments, residual, np.array(lo), np.array(hi)


def _admissible(family: str, p: int, pts: np.ndarray, wts: np.ndarray) -> bool:
    lam = REFERENCE.barycentric(pts)
    if family == "omega" and np.min(lam) < 1e-3:
        return False
    if np.min(wts) < 1e-6:
        return False
    dist = np.min([np.linalg.norm(pts[i] - pts[j])
                   for i in range(len(pts)) for j in range(i)])
    if dist < 1e-2:
        return False
    vander = monomial_matrix(pts, p)
    return np.linalg.matrix_rank(vander, tol=1e-8) == vander.shape[1]


def solve_rule_parameters(family: str, p: int, *, seed: int = 0,
                          max_attempts: int = 2000) -> np.ndarray:
    """Orbit weights and parameters of an admissible (family, p) rule.

    Random restarts of a bounded nonlinear least-squares solve are tried until
    a rule with positive weights, distinct in-element nodes and moment
    residual at roundoff level is found.
    """
    layout, _, _, residual, lo, hi = _rule_problem(family, p)
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        x0 = rng.uniform(lo, hi)
        x0[:len(layout)] = rng.uniform(0.01, 0.2, len(layout)) / len(layout)
        sol = least_squares(residual, x0, bounds=(lo, hi), xtol=1e-15,
                            ftol=1e-15, gtol=1e-15, max_nfev=2000)
        if np.max(np.abs(sol.fun)) > 1e-13:
            continue
        if _admissible(family, p, *_assemble_rule(layout, sol.x)):
            return sol.x
    raise ConfigurationError(f"moment solve for ({family}, {p}) did not converge")


def rule_from_parameters(family: str, p: int, x: np.ndarray) -> VolumeCubature:
    layout = ORBIT_LAYOUTS[(family, p)]
    pts, wts = _assemble_rule(layout, np.asarray(x, dtype=float))
    return VolumeCubature(family=family, p=p, degree=required_degree(family, p),
                          points=pts, weights=wts)


def solve_symmetric_rule(family: str, p: int, *, seed: int = 0,
                         max_attempts: int = 2000) -> VolumeCubature:
    """An admissible symmetric (family, p) rule from the given restart seed."""
    return rule_from_parameters(
        family, p, solve_rule_parameters(family, p, seed=seed, max_attempts=max_attempts))


def optimize_rule(family: str, p: int, objective, *, seeds=range(32),
                  steps: int = 40) -> VolumeCubature:
    """Among admissible rules, the one minimizing ``objective(cubature)``.

    Rules with interior freedom form a continuous family. Candidates from
    several restart seeds are improved by projected descent along that
    family: a finite-difference gradient of the objective is projected onto
    the null space of the moment Jacobian, and after each step the moment
    equations are restored to roundoff by a least-squares projection.
    """
    from scipy.linalg import null_space

    layout, _, moments, residual, lo, hi = _rule_problem(family, p)

    def f(x):
        pts, wts = _assemble_rule(layout, x)
        if not _admissible(family, p, pts, wts):
            return np.inf
        return float(objective(rule_from_parameters(family, p, x)))

    def project(x):
        sol = least_squares(residual, np.clip(x, lo, hi), bounds=(lo, hi), xtol=1e-15,
                            ftol=1e-15, gtol=1e-15)
        return sol.x if np.max(np.abs(sol.fun)) <= 1e-13 else None

    def descend(x, val):
        step = 1e-2
        for _ in range(steps):
            eps = 1e-7
            jac = np.array([(moments(x + eps * e) - moments(x - eps * e)) / (2 * eps)
                            for e in np.eye(len(x))]).T
            basis = null_space(jac, rcond=1e-9)
            if basis.shape[1] == 0:
                break
            grad = np.array([(f(x + eps * b) - f(x - eps * b)) / (2 * eps) for b in basis.T])
            if not np.all(np.isfinite(grad)) or np.linalg.norm(grad) == 0.0:
                break
            direction = -basis @ grad / np.linalg.norm(grad)
            while step > 1e-6:
                xn = project(x + step * direction)
                vn = f(xn) if xn is not None else np.inf
                if vn < val:
                    x, val = xn, vn
                    step *= 1.5
                    break
                step *= 0.5
            else:
                break
        return x, val

    best, best_val = None, np.inf
    for seed in seeds:
        try:
            x0 = solve_rule_parameters(family, p, seed=seed, max_attempts=200)
        except ConfigurationError:
            continue
        x, val = descend(x0, f(x0))
        if val < best_val:
            best, best_val = x, val
    if best is None:
        raise ConfigurationError(f"no admissible ({family}, {p}) rule found")
    return rule_from_parameters(family, p, best)

# }}}

# vim: foldmethod=marker
