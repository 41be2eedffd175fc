import numpy as np
import pytest

from lesionflow.correspondence import (CorrespondenceMap, DeformedTemplate, coarse_map_from_template,
                                       coarse_map_to_template, map_point, map_points)
from lesionflow.mesh import MeshError, SurfacePoint
from lesionflow.templates import icosphere

from conftest import random_points


def test_identity_deformation_gives_identity_rows(small_capsule):
    d = DeformedTemplate(small_capsule.vertices)
    cmap = coarse_map_to_template(small_capsule, d, small_capsule)
    assert len(cmap) == small_capsule.n_vertices
    assert np.allclose(cmap.positions(small_capsule), small_capsule.vertices, atol=1e-9)
    assert all(max(p.bary) == pytest.approx(1.0) for p in cmap.rows[:50])
    back = coarse_map_from_template(small_capsule, d, small_capsule)
    assert np.allclose(back.positions(small_capsule), small_capsule.vertices, atol=1e-9)


def test_rigid_offset_shares_coordinates(small_capsule):
    shift = np.array([3.0, -2.0, 1.0])
    scan = small_capsule.with_vertices(small_capsule.vertices + shift)
    d = DeformedTemplate(small_capsule.vertices + shift)
    cmap = coarse_map_to_template(scan, d, small_capsule)
    assert np.allclose(cmap.positions(small_capsule), small_capsule.vertices, atol=1e-9)


def test_connectivity_mismatch(small_capsule):
    with pytest.raises(MeshError):
        coarse_map_to_template(small_capsule, DeformedTemplate(np.zeros((5, 3))), small_capsule)
    other = icosphere(1)
    with pytest.raises(MeshError):
        DeformedTemplate.from_mesh(other, small_capsule)


def test_map_points_identity(small_capsule, rng):
    d = DeformedTemplate(small_capsule.vertices)
    cmap = coarse_map_to_template(small_capsule, d, small_capsule)
    tri, bary = random_points(small_capsule, rng, 40)
    t2, b2 = map_points(cmap, small_capsule, small_capsule, tri, bary)
    # chordal blend of corner images reprojected: exact when the map is the identity
    assert np.allclose(small_capsule.embed_many(t2, b2), small_capsule.embed_many(tri, bary), atol=1e-9)
    p = map_point(cmap, small_capsule, small_capsule, SurfacePoint(int(tri[0]), tuple(bary[0])))
    assert p.triangle == t2[0]
    with pytest.raises(IndexError):
        map_point(cmap, small_capsule, small_capsule, SurfacePoint(10 ** 7, (1, 0, 0)))
    assert map_points(cmap, small_capsule, small_capsule, [], [])[0].size == 0


def test_map_save_load(tmp_path, small_capsule, rng):
    tri, bary = random_points(small_capsule, rng, small_capsule.n_vertices)
    cmap = CorrespondenceMap("a", "T", tri, bary)
    cmap.save(tmp_path / "m.lflw", "h1")
    back = CorrespondenceMap.load(tmp_path / "m.lflw")
    assert back.config_hash == "h1"
    assert np.array_equal(back.tri, tri) and np.array_equal(back.bary, bary)
    cmap.check(small_capsule, small_capsule)
    with pytest.raises(ValueError):
        CorrespondenceMap("a", "T", tri[:-1], bary).check(small_capsule, small_capsule)
    with pytest.raises(ValueError):
        CorrespondenceMap("a", "T", tri[:3], bary[:2])
