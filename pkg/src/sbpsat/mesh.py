"""
Unstructured triangulations of the unit square and affine element maps.

Local face ``i`` of an element with vertices ``(v0, v1, v2)`` joins ``v_i``
and ``v_{(i+1) % 3}``, which is the image of reference face ``i`` under the
affine map ``x = v0 + [v1 - v0, v2 - v0] xi``. Because all elements are
counterclockwise, the two elements sharing an edge traverse it in opposite
directions; face cubature nodes on the neighbour side are therefore the
reversed sequence of the owning side.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from sbpsat.errors import ConfigurationError, MetricError, PerturbationError, TopologyError
from sbpsat.reference import REFERENCE

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    elements: np.ndarray
    #: rows ``(kappa, face_kappa, nu, face_nu)``
    interior_faces: np.ndarray | None = None
    #: rows ``(kappa, face_kappa)``
    boundary_faces: np.ndarray | None = None
    boundary_tags: tuple[str, ...] = ()

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    @property
    def h(self) -> float:
        """Nominal element size ``1 / sqrt(K / 2)``."""
        return 1.0 / np.sqrt(self.num_elements / 2.0)

    def face_vertices(self, element: int, face: int) -> tuple[int, int]:
        a, b = REFERENCE.faces[face]
        el = self.elements[element]
        return int(el[a]), int(el[b])

    def signed_areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.elements)

    def boundary_lookup(self) -> dict[tuple[int, int], str]:
        return {(int(k), int(f)): tag for (k, f), tag
                in zip(self.boundary_faces, self.boundary_tags)}


def signed_areas(vertices: np.ndarray, elements: np.ndarray) -> np.ndarray:
    p0, p1, p2 = (vertices[elements[:, i]] for i in range(3))
    d1, d2 = p1 - p0, p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_connectivity(mesh: TriangleMesh, default_tag: str = DIRICHLET) -> TriangleMesh:
    """Populate interior and boundary face lists of *mesh*."""
    edges: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for k, el in enumerate(mesh.elements):
        for f, (a, b) in enumerate(REFERENCE.faces):
            key = tuple(sorted((int(el[a]), int(el[b]))))
            edges.setdefault(key, []).append((k, f))

    interior, boundary = [], []
    for key, owners in edges.items():
        if len(owners) > 2:
            raise TopologyError(f"edge {key} is shared by {len(owners)} elements")
        if len(owners) == 2:
            (k, fk), (n, fn) = sorted(owners)
            if mesh.face_vertices(k, fk) != mesh.face_vertices(n, fn)[::-1]:
                raise TopologyError(f"elements {k} and {n} have inconsistent orientation")
            interior.append((k, fk, n, fn))
        else:
            boundary.append(owners[0])

    interior = np.array(sorted(interior), dtype=int).reshape(-1, 4)
    boundary = np.array(sorted(boundary), dtype=int).reshape(-1, 2)
    old = {} if mesh.boundary_faces is None else mesh.boundary_lookup()
    tags = tuple(old.get((int(k), int(f)), default_tag) for k, f in boundary)
    return replace(mesh, interior_faces=interior, boundary_faces=boundary, boundary_tags=tags)


def structured_mesh(N: int) -> TriangleMesh:
    """``N x N`` squares on the unit square, each split along the diagonal
    from its lower-left to its upper-right corner."""
    if N < 1:
        raise ConfigurationError(f"structured mesh needs N >= 1, got {N}")
    s = np.linspace(0.0, 1.0, N + 1)
    X, Y = np.meshgrid(s, s, indexing="xy")
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return j * (N + 1) + i

    elements = []
    for j in range(N):
        for i in range(N):
            v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            elements.append((v00, v10, v11))
            elements.append((v00, v11, v01))
    mesh = TriangleMesh(vertices=vertices, elements=np.array(elements, dtype=int))
    return build_connectivity(mesh)


def tag_boundary(mesh: TriangleMesh, rule) -> TriangleMesh:
    """Retag boundary faces; ``rule(midpoint) -> "dirichlet" | "neumann"``."""
    tags = []
    for k, f in mesh.boundary_faces:
        a, b = mesh.face_vertices(k, f)
        tag = rule(0.5 * (mesh.vertices[a] + mesh.vertices[b]))
        if tag not in (DIRICHLET, NEUMANN):
            raise ConfigurationError(f"unknown boundary tag {tag!r}")
        tags.append(tag)
    return replace(mesh, boundary_tags=tuple(tags))


def boundary_vertices(mesh: TriangleMesh) -> np.ndarray:
    verts = set()
    for k, f in mesh.boundary_faces:
        verts.update(mesh.face_vertices(k, f))
    return np.array(sorted(verts), dtype=int)


def perturb_mesh(mesh: TriangleMesh, magnitude: float, seed: int,
                 max_retries: int = 1000) -> TriangleMesh:
    """Randomly displace interior vertices by up to ``magnitude * h`` in each
    coordinate.

    Vertices are visited in index order and each displacement is drawn from a
    PCG64 generator seeded with *seed*; a draw that would invert or flatten an
    incident element is rejected and redrawn.
    """
    if not 0.0 <= magnitude < 0.5:
        raise ConfigurationError(f"perturbation magnitude must lie in [0, 0.5), got {magnitude}")
    rng = np.random.Generator(np.random.PCG64(seed))
    vertices = mesh.vertices.copy()
    if magnitude == 0.0:
        return replace(mesh, vertices=vertices)

    fixed = set(boundary_vertices(mesh).tolist())
    incident: dict[int, list[int]] = {}
    for k, el in enumerate(mesh.elements):
        for v in el:
            incident.setdefault(int(v), []).append(k)

    delta = magnitude * mesh.h
    for v in range(len(vertices)):
        if v in fixed:
            continue
        elems = mesh.elements[incident[v]]
        origin = vertices[v].copy()
        for _ in range(max_retries):
            vertices[v] = origin + rng.uniform(-delta, delta, size=2)
            if np.all(signed_areas(vertices, elems) > 0.0):
                break
        else:
            raise PerturbationError(f"could not move vertex {v} without inverting an element")
    return replace(mesh, vertices=vertices)


def element_angles(mesh: TriangleMesh) -> np.ndarray:
    """Interior angles in degrees, shape ``(K, 3)``."""
    P = mesh.vertices[mesh.elements]
    angles = np.empty((mesh.num_elements, 3))
    for i in range(3):
        u = P[:, (i + 1) % 3] - P[:, i]
        w = P[:, (i + 2) % 3] - P[:, i]
        cos = np.sum(u * w, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
        angles[:, i] = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return angles


# {{{ affine maps

@dataclass(frozen=True)
class ElementMap:
    """Metric terms of one affine element."""

    jacobian: np.ndarray      # d x / d xi, columns are the images of the axes
    det: float
    #: rows are the contravariant vectors grad xi and grad eta
    inverse: np.ndarray
    normals: np.ndarray       # (3, 2) physical outward unit normals
    lengths: np.ndarray       # (3,) physical face lengths
    #: ``|| det * (n_xi grad xi + n_eta grad eta) ||`` per face
    contravariant_scale: np.ndarray

    def to_physical(self, xi: np.ndarray, origin: np.ndarray) -> np.ndarray:
        return origin + xi @ self.jacobian.T


def element_metrics(mesh: TriangleMesh, element: int) -> ElementMap:
    p0, p1, p2 = mesh.vertices[mesh.elements[element]]
    jac = np.column_stack([p1 - p0, p2 - p0])
    det = float(np.linalg.det(jac))
    scale = max(np.abs(jac).max(), 1.0e-300)
    if not det > 1.0e-14 * scale**2:
        raise MetricError(f"element {element} is degenerate or inverted (J = {det:.3e})")
    inv = np.linalg.inv(jac)

    normals, lengths, contra = np.empty((3, 2)), np.empty(3), np.empty(3)
    verts = (p0, p1, p2)
    for f, (a, b) in enumerate(REFERENCE.faces):
        d = verts[b] - verts[a]
        lengths[f] = np.hypot(*d)
        normals[f] = np.array([d[1], -d[0]]) / lengths[f]
        n_ref = REFERENCE.face_normal(f)
        contra[f] = np.linalg.norm(det * (n_ref @ inv))
    return ElementMap(jacobian=jac, det=det, inverse=inv, normals=normals,
                      lengths=lengths, contravariant_scale=contra)


def affine_maps(mesh: TriangleMesh) -> list[ElementMap]:
    return [element_metrics(mesh, k) for k in range(mesh.num_elements)]

# }}}


# {{{ text format

def write_mesh(stream, mesh: TriangleMesh) -> None:
    """Plain-text mesh format::

        # comment lines start with '#'
        vertices <nv>
        <x> <y>                 (nv lines)
        elements <K>
        <v0> <v1> <v2>          (K lines, counterclockwise)
        boundary <nb>
        <element> <face> <tag>  (nb lines, tag in {dirichlet, neumann})
    """
    stream.write("# sbpsat mesh v1\n")
    stream.write(f"vertices {len(mesh.vertices)}\n")
    for x, y in mesh.vertices:
        stream.write(f"{x:.17e} {y:.17e}\n")
    stream.write(f"elements {mesh.num_elements}\n")
    for a, b, c in mesh.elements:
        stream.write(f"{a} {b} {c}\n")
    stream.write(f"boundary {len(mesh.boundary_faces)}\n")
    for (k, f), tag in zip(mesh.boundary_faces, mesh.boundary_tags):
        stream.write(f"{k} {f} {tag}\n")


def read_mesh(text: str) -> TriangleMesh:
    lines = [ln.strip() for ln in text.splitlines()
             if ln.strip() and not ln.lstrip().startswith("#")]
    pos = 0

    def section(name):
        nonlocal pos
        key, count = lines[pos].split()
        if key != name:
            raise ConfigurationError(f"expected section {name!r}, found {key!r}")
        count = int(count)
        rows = [ln.split() for ln in lines[pos + 1:pos + 1 + count]]
        pos += 1 + count
        return rows

    vertices = np.array(section("vertices"), dtype=float).reshape(-1, 2)
    elements = np.array(section("elements"), dtype=int).reshape(-1, 3)
    bnd = section("boundary")
    mesh = build_connectivity(TriangleMesh(vertices=vertices, elements=elements))
    tags = {(int(k), int(f)): tag for k, f, tag in bnd}
    if set(tags) != set(mesh.boundary_lookup()):
        raise TopologyError("boundary section does not match the mesh boundary")
    return replace(mesh, boundary_tags=tuple(tags[(int(k), int(f))]
                                             for k, f in mesh.boundary_faces))

# }}}

# vim: foldmethod=marker
