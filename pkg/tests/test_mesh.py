import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from lesionflow.mesh import (Mesh, MeshError, SurfacePoint, TangentVector, embed, field_at_points,
                             fem_operators, heat_diffuse, rotate_into_plane)
from lesionflow.solvers import SolverError, conjugate_gradient
from lesionflow.templates import capsule, icosphere, make_template, plane

from conftest import random_points


def test_icosphere_counts_and_area(sphere):
    assert sphere.n_vertices == 10 * 4 ** 3 + 2
    assert sphere.surface_area == pytest.approx(4 * np.pi, rel=0.01)
    assert np.all(np.einsum("ij,ij->i", sphere.face_normals, sphere.corners.mean(axis=1)) > 0)


def test_plane_and_capsule_shapes():
    g = plane(4, 3, spacing=2.0)
    assert g.n_vertices == 20 and g.n_triangles == 24
    assert np.allclose(g.face_normals, [0, 0, 1])
    c = capsule(90)
    assert abs(c.n_vertices - 10000) < 1000
    assert np.isclose(c.vertex_boundary.sum(), 0)


def test_make_template_rejects_unknown_kind():
    with pytest.raises(ValueError):
        make_template("torus")


def test_validate_rejects_bad_meshes():
    V = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    with pytest.raises(MeshError):
        Mesh(V, [[0, 1, 5]])
    with pytest.raises(MeshError):
        Mesh(V, [[0, 1, 1]])
    with pytest.raises(MeshError, match="orientation"):
        Mesh(V, [[0, 1, 2], [0, 1, 3]])
    with pytest.raises(MeshError, match="degenerate"):
        Mesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float), [[0, 1, 2]])
    with pytest.raises(MeshError):
        Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
    V2 = V.copy()
    V2[0, 0] = np.nan
    with pytest.raises(MeshError):
        Mesh(V2, [[0, 1, 2]])


def test_surface_point_normalizes_and_rejects():
    p = SurfacePoint(3, (0.5, 0.5 + 1e-12, -1e-12))
    assert sum(p.bary) == pytest.approx(1.0)
    assert min(p.bary) >= 0
    with pytest.raises(ValueError):
        SurfacePoint(0, (0.5, 0.6, 0.1))
    with pytest.raises(ValueError):
        SurfacePoint(0, (1.2, -0.2, 0.0))


def test_embed_vertex_point(sphere):
    for v in (0, 17, 500):
        p = SurfacePoint.at_vertex(sphere, v)
        assert np.allclose(embed(sphere, p), sphere.vertices[v])
    with pytest.raises(IndexError):
        embed(sphere, SurfacePoint(sphere.n_triangles, (1, 0, 0)))


def test_vertex_basis_orthonormal_and_tangent(small_capsule):
    B = small_capsule.vertex_basis
    n = small_capsule.vertex_normals
    assert np.allclose(np.einsum("nda,ndb->nab", B, B), np.eye(2), atol=1e-12)
    assert np.allclose(np.einsum("nda,nd->na", B, n), 0, atol=1e-12)
    assert np.allclose(np.cross(B[:, :, 0], B[:, :, 1]), n, atol=1e-12)


def test_tangent_vector_to_3d(small_sphere):
    v = TangentVector(5, (1.0, 0.0)).to_3d(small_sphere)
    assert np.allclose(v, small_sphere.vertex_basis[5][:, 0])
    p = SurfacePoint(2, (0.2, 0.3, 0.5))
    w = TangentVector(p, (0.0, 2.0)).to_3d(small_sphere)
    assert abs(w @ small_sphere.face_normals[2]) < 1e-12
    assert np.linalg.norm(w) == pytest.approx(2.0)


def test_fem_operators_structure(small_capsule):
    M, S, G = fem_operators(small_capsule)
    assert M.diagonal().sum() == pytest.approx(small_capsule.surface_area)
    assert abs(S - S.T).max() < 1e-12
    assert np.allclose(S @ np.ones(small_capsule.n_vertices), 0, atol=1e-9)
    x = small_capsule.vertices[:, 0]
    g = (G @ x).reshape(-1, 3)
    assert np.allclose(np.einsum("md,md->m", g, small_capsule.face_normals), 0, atol=1e-9)
    # linear functions have zero Laplacian away from curvature only; on a plane exactly
    p = plane(6)
    _, Sp, _ = fem_operators(p)
    interior = p.vertex_boundary == 0
    assert np.allclose((Sp @ p.vertices[:, 0])[interior], 0, atol=1e-12)


def test_heat_mass_conservation_and_positivity(small_capsule, rng):
    f = np.zeros(small_capsule.n_vertices)
    f[rng.integers(small_capsule.n_vertices, size=5)] = 1.0
    m = small_capsule.lumped_mass
    for t in (1.0, 50.0, 500.0):
        u = heat_diffuse(small_capsule, f, t)
        assert abs(m @ u - m @ f) / (m @ f) < 1e-8
        assert u.min() > -1e-9
    assert np.array_equal(heat_diffuse(small_capsule, f, 0.0), f)
    with pytest.raises(ValueError):
        heat_diffuse(small_capsule, f, -1.0)


def test_heat_multichannel_matches_single(small_sphere, rng):
    F = rng.random((small_sphere.n_vertices, 2))
    U = heat_diffuse(small_sphere, F, 3.0)
    assert np.allclose(U[:, 1], heat_diffuse(small_sphere, F[:, 1], 3.0))


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_rotate_into_plane_preserves_length(a, b, c, d):
    n0 = np.array([[a, b, 1.0]])
    n0 /= np.linalg.norm(n0)
    n1 = np.array([[c, 1.0, d]])
    n1 /= np.linalg.norm(n1)
    v = np.cross(n0, [[0.3, -0.2, 0.9]])
    out = rotate_into_plane(v, n0, n1)
    assert abs(out[0] @ n1[0]) < 1e-9
    assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(v), rel=1e-9, abs=1e-12)


def test_field_at_points_constant_on_plane(grid, rng):
    vec = np.tile([0.5, -1.0, 0.0], (grid.n_vertices, 1))
    tri, bary = random_points(grid, rng, 20)
    assert np.allclose(field_at_points(grid, vec, tri, bary), [0.5, -1.0, 0.0])


def test_interpolate_linear_exact(grid, rng):
    f = 2 * grid.vertices[:, 0] - grid.vertices[:, 1]
    tri, bary = random_points(grid, rng, 30)
    pos = grid.embed_many(tri, bary)
    assert np.allclose(grid.interpolate(f, tri, bary), 2 * pos[:, 0] - pos[:, 1])


def test_conjugate_gradient_solves_and_reports(rng):
    A = sparse.random(60, 60, density=0.1, random_state=3)
    A = (A @ A.T + sparse.eye(60)).tocsr()
    b = rng.normal(size=60)
    res = conjugate_gradient(A, b, tol=1e-12)
    assert np.allclose(A @ res.x, b, atol=1e-9)
    assert res.residuals[-1] < 1e-12
    assert 0 < res.ritz_min <= res.ritz_max
    with pytest.raises(SolverError):
        conjugate_gradient(A, b, tol=1e-14, maxiter=2)
    with pytest.raises(SolverError):
        conjugate_gradient(-A, b)
    assert np.array_equal(conjugate_gradient(A, np.zeros(60)).x, np.zeros(60))
