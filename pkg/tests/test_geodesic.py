import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesionflow import kernels
from lesionflow.geodesic import (exp_map, geodesic_distance, geodesic_matrix, pair_distances,
                                 steiner_graph, trace, trace_from_vertices)
from lesionflow.mesh import Mesh, SurfacePoint, TangentVector
from lesionflow.spatial import closest_surface_point
from lesionflow.templates import capsule, icosphere, plane

from conftest import random_points
from oracles import great_circle


@pytest.fixture(scope="module")
def flat():
    return plane(30, spacing=1.0)


def _pt(mesh, tri, bary):
    return SurfacePoint(int(tri), tuple(bary))


def test_identical_points_zero(small_capsule):
    p = SurfacePoint(10, (0.2, 0.3, 0.5))
    assert geodesic_distance(small_capsule, p, p) == 0.0


def test_planar_distance_close_to_euclidean(flat, rng):
    tri, bary = random_points(flat, rng, 60)
    pos = flat.embed_many(tri, bary)
    d = pair_distances(flat, tri[:30], bary[:30], tri[30:], bary[30:])
    e = np.linalg.norm(pos[:30] - pos[30:], axis=1)
    assert np.all(d >= e - 1e-9)
    assert np.max((d - e) / e) < 0.05


def test_same_triangle_is_straight_line(flat):
    a, b = SurfacePoint(7, (0.6, 0.2, 0.2)), SurfacePoint(7, (0.1, 0.1, 0.8))
    d = geodesic_distance(flat, a, b)
    assert d == pytest.approx(np.linalg.norm(np.subtract(*flat.embed_many([7, 7], [a.bary, b.bary]))))


def test_steiner_refinement_tightens(flat, rng):
    tri, bary = random_points(flat, rng, 40)
    e = np.linalg.norm(np.subtract(*np.split(flat.embed_many(tri, bary), 2)), axis=1)
    err = [np.mean(pair_distances(flat, tri[:20], bary[:20], tri[20:], bary[20:], steiner=k) / e - 1)
           for k in (0, 1, 3)]
    assert err[0] >= err[1] >= err[2]
    assert err[2] < 0.01


def test_antipodal_sphere(sphere):
    a = closest_surface_point(sphere, [0, 0, 1.0])
    b = closest_surface_point(sphere, [0, 0, -1.0])
    assert abs(geodesic_distance(sphere, a, b) - np.pi) / np.pi < 0.05


def test_sphere_against_great_circle(sphere, rng):
    tri, bary = random_points(sphere, rng, 40)
    pos = sphere.embed_many(tri, bary)
    d = pair_distances(sphere, tri[:20], bary[:20], tri[20:], bary[20:])
    gc = np.array([great_circle(pos[i], pos[20 + i]) for i in range(20)])
    assert np.max(np.abs(d - gc) / gc) < 0.05


def test_matrix_matches_pairwise(small_capsule, rng):
    st_, sb = random_points(small_capsule, rng, 4)
    tt, tb = random_points(small_capsule, rng, 5)
    D = geodesic_matrix(small_capsule, st_, sb, tt, tb)
    for i in range(4):
        for j in range(5):
            ref = geodesic_distance(small_capsule, _pt(small_capsule, st_[i], sb[i]),
                                    _pt(small_capsule, tt[j], tb[j]))
            assert D[i, j] == pytest.approx(ref, rel=1e-12)


def test_matrix_limit(small_capsule, rng):
    st_, sb = random_points(small_capsule, rng, 6)
    tt, tb = random_points(small_capsule, rng, 6)
    full = geodesic_matrix(small_capsule, st_, sb, tt, tb)
    lim = float(np.median(full))
    cut = geodesic_matrix(small_capsule, st_, sb, tt, tb, limit=lim)
    ok = full <= lim
    assert np.allclose(cut[ok], full[ok])
    assert np.all(np.isinf(cut[~ok]))
    assert geodesic_matrix(small_capsule, [], [], tt, tb).shape == (0, 6)


def test_disconnected_components_inf(caplog):
    a = icosphere(1)
    V = np.vstack([a.vertices, a.vertices + [5.0, 0, 0]])
    F = np.vstack([a.triangles, a.triangles + a.n_vertices])
    two = Mesh(V, F)
    with caplog.at_level(logging.WARNING):
        d = geodesic_distance(two, SurfacePoint(0, (1, 0, 0)), SurfacePoint(a.n_triangles, (1, 0, 0)))
    assert np.isinf(d)
    assert "disconnected" in caplog.text


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_symmetry_and_triangle_inequality(seed):
    mesh = _cap()
    r = np.random.default_rng(seed)
    tri, bary = random_points(mesh, r, 3)
    p = [_pt(mesh, t, b) for t, b in zip(tri, bary)]
    dab = geodesic_distance(mesh, p[0], p[1])
    assert dab == geodesic_distance(mesh, p[1], p[0])
    assert dab <= geodesic_distance(mesh, p[0], p[2]) + geodesic_distance(mesh, p[2], p[1]) + 1e-9


_CAP = {}


def _cap():
    if "m" not in _CAP:
        _CAP["m"] = capsule(16)
    return _CAP["m"]


def test_graph_cached_per_level(small_capsule):
    g1 = steiner_graph(small_capsule, 1)
    assert steiner_graph(small_capsule, 1) is g1
    assert steiner_graph(small_capsule, 2).n_nodes > g1.n_nodes


# -- tracing -----------------------------------------------------------------------

def test_trace_translation_on_plane(flat, rng):
    tri, bary = random_points(flat, rng, 50)
    pos = flat.embed_many(tri, bary)
    inside = np.all((pos[:, :2] > 8) & (pos[:, :2] < 22), axis=1)
    tri, bary, pos = tri[inside], bary[inside], pos[inside]
    vec = np.tile([3.0, -4.0, 0.0], (len(tri), 1))
    t2, b2, status = trace(flat, tri, bary, vec)
    assert np.all(status == kernels.TRACE_OK)
    assert np.allclose(flat.embed_many(t2, b2), pos + vec, atol=1e-9)


def test_trace_stops_at_boundary(flat):
    t, b, status = trace(flat, [0], [[1 / 3, 1 / 3, 1 / 3]], [[-100.0, 0.0, 0.0]])
    assert status[0] == kernels.TRACE_BOUNDARY
    assert flat.embed_many(t, b)[0, 0] == pytest.approx(0.0, abs=1e-9)


def test_trace_zero_vector_stays(small_capsule):
    t, b, _ = trace(small_capsule, [5], [[0.2, 0.3, 0.5]], [[0.0, 0.0, 0.0]])
    assert t[0] == 5 and np.allclose(b[0], [0.2, 0.3, 0.5])


def test_exp_map_follows_great_circle(sphere, rng):
    for _ in range(10):
        tri, bary = random_points(sphere, rng, 1)
        p = _pt(sphere, tri[0], bary[0])
        ang = rng.uniform(0, 2 * np.pi)
        L = rng.uniform(0.3, 2.5)
        v = TangentVector(p, (L * np.cos(ang), L * np.sin(ang)))
        q = exp_map(sphere, p, v)
        x0 = sphere.embed_many([p.triangle], [p.bary])[0]
        x1 = sphere.embed_many([q.triangle], [q.bary])[0]
        assert abs(great_circle(x0, x1) - L) / L < 0.02
        # the start direction lies in the flat face, not the sphere tangent plane
        plane_n = np.cross(x0, v.to_3d(sphere))
        assert abs(np.dot(plane_n / np.linalg.norm(plane_n), x1 / np.linalg.norm(x1))) < 0.05


def test_exp_map_quarter_circle(sphere):
    p = closest_surface_point(sphere, [0, 0, 1.0])
    x0 = sphere.embed_many([p.triangle], [p.bary])[0]
    e = np.cross(x0, [1.0, 0, 0])
    e /= np.linalg.norm(e)
    basis = sphere.face_basis[p.triangle]
    v = TangentVector(p, tuple(basis.T @ e * (np.pi / 2)))
    q = exp_map(sphere, p, v)
    x1 = sphere.embed_many([q.triangle], [q.bary])[0]
    assert abs(x1[2]) < 0.03


def test_trace_from_vertices_lengths(flat):
    vec = np.tile([1.5, 0.0, 0.0], (flat.n_vertices, 1))
    t, b, status = trace_from_vertices(flat, vec, scale=-1.0)
    ok = status == kernels.TRACE_OK
    assert np.allclose(flat.embed_many(t, b)[ok], flat.vertices[ok] - vec[ok], atol=1e-9)
