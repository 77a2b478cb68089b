import io
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbpsat.errors import ConfigurationError, MetricError, PerturbationError, TopologyError
from sbpsat.mesh import (
    DIRICHLET, NEUMANN, TriangleMesh, build_connectivity, element_angles, element_metrics,
    perturb_mesh, read_mesh, structured_mesh, tag_boundary, write_mesh)
from sbpsat.reference import REFERENCE


@pytest.mark.parametrize("N,K,ni,nb", [(1, 2, 1, 4), (2, 8, 8, 8), (8, 128, 176, 32)])
def test_structured_counts(N, K, ni, nb):
    mesh = structured_mesh(N)
    assert mesh.num_elements == K
    assert len(mesh.interior_faces) == ni
    assert len(mesh.boundary_faces) == nb


def test_finest_level_size():
    assert structured_mesh(64).num_elements == 8192


def test_invalid_size():
    with pytest.raises(ConfigurationError):
        structured_mesh(0)


def test_elements_are_counterclockwise_and_cover_square():
    mesh = structured_mesh(5)
    areas = mesh.signed_areas()
    assert np.all(areas > 0)
    assert np.isclose(areas.sum(), 1.0)


def test_non_manifold_edge():
    v = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [0.5, -1.0]], float)
    el = np.array([[0, 1, 2], [1, 3, 2], [1, 2, 4]])
    with pytest.raises(TopologyError):
        build_connectivity(TriangleMesh(v, el))


def test_inconsistent_orientation():
    v = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], float)
    el = np.array([[0, 1, 2], [1, 2, 3]])   # second element clockwise
    with pytest.raises(TopologyError):
        build_connectivity(TriangleMesh(v, el))


def test_zero_perturbation_is_identity():
    mesh = structured_mesh(4)
    np.testing.assert_array_equal(perturb_mesh(mesh, 0.0, seed=3).vertices, mesh.vertices)


def test_perturbation_is_deterministic():
    mesh = structured_mesh(16)
    a = perturb_mesh(mesh, 0.45, seed=2024)
    b = perturb_mesh(mesh, 0.45, seed=2024)
    assert a.vertices.tobytes() == b.vertices.tobytes()
    assert not np.array_equal(a.vertices, perturb_mesh(mesh, 0.45, seed=2025).vertices)


def test_strong_perturbation_is_valid_and_distorted():
    mesh = perturb_mesh(structured_mesh(16), 0.45, seed=2024)
    assert np.all(mesh.signed_areas() > 0)
    assert element_angles(mesh).max() > 150.0
    np.testing.assert_allclose(element_angles(mesh).sum(axis=1), 180.0)


def test_boundary_vertices_fixed():
    base = structured_mesh(6)
    mesh = perturb_mesh(base, 0.4, seed=1)
    on_bnd = np.any((base.vertices == 0) | (base.vertices == 1), axis=1)
    np.testing.assert_array_equal(mesh.vertices[on_bnd], base.vertices[on_bnd])


def test_perturbation_magnitude_range():
    with pytest.raises(ConfigurationError):
        perturb_mesh(structured_mesh(2), 0.6, seed=0)


def test_perturbation_error_after_retries(monkeypatch):
    import sbpsat.mesh as mesh_mod
    monkeypatch.setattr(mesh_mod, "signed_areas", lambda v, e: -np.ones(len(e)))
    with pytest.raises(PerturbationError):
        perturb_mesh(structured_mesh(2), 0.2, seed=0, max_retries=5)


def test_reference_element_metrics():
    mesh = TriangleMesh(REFERENCE.vertices.copy(), np.array([[0, 1, 2]]))
    m = element_metrics(build_connectivity(mesh), 0)
    assert m.det == 1.0
    for f in range(3):
        np.testing.assert_allclose(m.normals[f], REFERENCE.face_normal(f))
        assert np.isclose(m.lengths[f], REFERENCE.face_length(f))


def test_scaled_element_metrics():
    s = 0.3
    mesh = TriangleMesh(s * REFERENCE.vertices, np.array([[0, 1, 2]]))
    m = element_metrics(mesh, 0)
    assert np.isclose(m.det, s * s)
    np.testing.assert_allclose(m.lengths, s * np.array([1, np.sqrt(2), 1]))


def test_structured_jacobian():
    mesh = structured_mesh(8)
    for k in (0, 1, 77):
        assert np.isclose(element_metrics(mesh, k).det, 1.0 / 64.0)


def test_degenerate_element():
    mesh = TriangleMesh(np.array([[0, 0], [1, 0], [2, 0]], float), np.array([[0, 1, 2]]))
    with pytest.raises(MetricError):
        element_metrics(mesh, 0)


def test_boundary_tagging():
    mesh = tag_boundary(structured_mesh(3), lambda m: NEUMANN if m[1] == 0.0 else DIRICHLET)
    assert mesh.boundary_tags.count(NEUMANN) == 3
    with pytest.raises(ConfigurationError):
        tag_boundary(mesh, lambda m: "robin")


def test_mesh_round_trip():
    mesh = tag_boundary(perturb_mesh(structured_mesh(4), 0.3, seed=5),
                        lambda m: NEUMANN if m[0] == 1.0 else DIRICHLET)
    buf = io.StringIO()
    write_mesh(buf, mesh)
    back = read_mesh(buf.getvalue())
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.elements, mesh.elements)
    np.testing.assert_array_equal(back.interior_faces, mesh.interior_faces)
    assert back.boundary_tags == mesh.boundary_tags


def test_read_mesh_boundary_mismatch():
    buf = io.StringIO()
    write_mesh(buf, structured_mesh(1))
    text = buf.getvalue().replace("boundary 4", "boundary 3")
    lines = text.splitlines()
    del lines[-1]
    with pytest.raises(TopologyError):
        read_mesh("\n".join(lines))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.floats(0.0, 0.45), st.integers(0, 10**6))
def test_perturbed_mesh_invariants(N, magnitude, seed):
    """Perturbation keeps orientation, total area and the face topology,
    and its interior faces still pair opposite traversals."""
    base = structured_mesh(N)
    mesh = perturb_mesh(base, magnitude, seed)
    assert np.all(mesh.signed_areas() > 0)
    assert np.isclose(mesh.signed_areas().sum(), 1.0)
    rebuilt = build_connectivity(replace(mesh, interior_faces=None, boundary_faces=None))
    np.testing.assert_array_equal(rebuilt.interior_faces, base.interior_faces)
    for k, fk, v, fv in mesh.interior_faces:
        assert mesh.face_vertices(k, fk) == mesh.face_vertices(v, fv)[::-1]
    # every element face is counted once as boundary or twice as interior
    assert 2 * len(mesh.interior_faces) + len(mesh.boundary_faces) == 3 * mesh.num_elements
