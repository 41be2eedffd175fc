import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesionflow.correspondence import CorrespondenceMap, DeformedTemplate, coarse_map_from_template
from lesionflow.signals import (LesionSet, VertexSignal, build_lesion_signal, default_lesion_time, pull_back,
                                texture_channels)
from lesionflow.templates import capsule

from conftest import random_points

_MESH = {}


def _cap():
    if "m" not in _MESH:
        _MESH["m"] = capsule(20)
    return _MESH["m"]


def test_lesion_signal_normalized(small_capsule, rng):
    tri, bary = random_points(small_capsule, rng, 12)
    s = build_lesion_signal(small_capsule, tri, bary)
    assert s.values.max() == 1.0
    assert s.values.min() >= 0.0
    assert s.channel == "lesion"


def test_lesion_signal_peaks_at_single_lesion(small_capsule):
    v = 123
    tri = int(np.nonzero(np.any(small_capsule.triangles == v, axis=1))[0][0])
    bary = (small_capsule.triangles[tri] == v).astype(float)
    s = build_lesion_signal(small_capsule, [tri], [bary])
    assert int(np.argmax(s.values)) == v


def test_empty_lesions_give_zero_signal(small_capsule):
    s = build_lesion_signal(small_capsule, [], np.zeros((0, 3)))
    assert not np.any(s.values)


def test_invalid_time(small_capsule):
    with pytest.raises(ValueError):
        build_lesion_signal(small_capsule, [0], [[1, 0, 0]], diffusion_time=0.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_lesion_signal_order_free(seed):
    mesh = _cap()
    r = np.random.default_rng(seed)
    tri, bary = random_points(mesh, r, 8)
    perm = r.permutation(8)
    a = build_lesion_signal(mesh, tri, bary).values
    b = build_lesion_signal(mesh, tri[perm], bary[perm]).values
    assert np.array_equal(a, b)


def test_longer_diffusion_is_smoother(small_capsule, rng):
    tri, bary = random_points(small_capsule, rng, 5)
    t = default_lesion_time(small_capsule)
    sharp = build_lesion_signal(small_capsule, tri, bary, t).values
    wide = build_lesion_signal(small_capsule, tri, bary, 16 * t).values
    assert (wide > 0.1).sum() > (sharp > 0.1).sum()


def test_pull_back_identity(small_capsule, rng):
    d = DeformedTemplate(small_capsule.vertices)
    cmap = coarse_map_from_template(small_capsule, d, small_capsule)
    f = rng.random(small_capsule.n_vertices)
    assert np.allclose(pull_back(small_capsule, cmap, f, small_capsule).values, f)
    with pytest.raises(ValueError):
        pull_back(small_capsule, cmap, f[:-1], small_capsule)


def test_texture_channels(small_capsule, rng):
    colors = rng.random((small_capsule.n_vertices, 3))
    scan = type(small_capsule)(small_capsule.vertices, small_capsule.triangles, vertex_colors=colors)
    cmap = coarse_map_from_template(small_capsule, DeformedTemplate(small_capsule.vertices), scan)
    chans = texture_channels(small_capsule, cmap, scan)
    assert [c.channel for c in chans] == ["R", "G", "B"]
    assert np.allclose(chans[1].values, colors[:, 1])
    with pytest.raises(ValueError):
        texture_channels(small_capsule, cmap, small_capsule)


def test_vertex_signal_channel():
    with pytest.raises(ValueError):
        VertexSignal("m", [1.0], "alpha")


def test_lesion_set_json_roundtrip_and_snap(tmp_path, small_capsule, rng):
    tri, bary = random_points(small_capsule, rng, 4)
    ls = LesionSet("scan", ["a", "b", "c", "d"], tri, bary)
    ls.save(tmp_path / "l.json")
    back = LesionSet.load(tmp_path / "l.json", small_capsule)
    assert back.ids == ls.ids and np.array_equal(back.tri, tri) and np.allclose(back.bary, bary)
    pos = small_capsule.embed_many(tri[:1], bary[:1])[0] + small_capsule.face_normals[tri[0]] * 0.5
    snapped = LesionSet.from_json({"lesions": [{"id": "p", "pos": pos.tolist()}]}, small_capsule)
    assert snapped.snapped[0]
    assert np.allclose(small_capsule.embed_many(snapped.tri, snapped.bary)[0],
                       small_capsule.embed_many(tri[:1], bary[:1])[0], atol=1e-6)
    with pytest.raises(ValueError):
        LesionSet.from_json({"lesions": [{"id": "p", "pos": [0, 0, 0]}]})
    with pytest.raises(ValueError):
        LesionSet("s", ["a", "a"], [0, 1], [[1, 0, 0]] * 2)
    sub = ls.subset(["d", "a"])
    assert sub.ids == ["a", "d"]
    with pytest.raises(ValueError):
        LesionSet("s", ["a"], [10 ** 7], [[1, 0, 0]]).check(small_capsule)
