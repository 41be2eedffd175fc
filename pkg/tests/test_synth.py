import numpy as np
import pytest

from lesionflow import io
from lesionflow.synth import (MID_RANGE, Deformation, SynthError, count_flipped, make_subject, sample_lesions,
                              smooth_tangent_field, write_subject)
from lesionflow.templates import capsule


@pytest.fixture(scope="module")
def tmpl():
    return capsule(30)


def _make(tmpl, seed=0, **kw):
    kw.setdefault("n_lesions", 12)
    return make_subject(seed, template=tmpl, **kw)


def test_seeded_determinism(tmpl):
    a, b = _make(tmpl, 3), _make(tmpl, 3)
    assert np.array_equal(a.src_mesh.vertices, b.src_mesh.vertices)
    assert np.array_equal(a.deformed_tgt.vertices, b.deformed_tgt.vertices)
    assert a.gt == b.gt and a.lesions_tgt.ids == b.lesions_tgt.ids
    c = _make(tmpl, 4)
    assert not np.array_equal(a.src_mesh.vertices, c.src_mesh.vertices)


def test_pairs_share_template_location(tmpl):
    fx = _make(tmpl, 1)
    for s, t in fx.gt.pairs:
        ts, bs = fx.true_location("src", s)
        tt, bt = fx.true_location("tgt", t)
        assert ts == tt and np.array_equal(bs, bt)
    assert fx.lesions_src.ids != fx.lesions_tgt.ids


def test_lesion_spacing(tmpl, rng):
    tri, bary = sample_lesions(rng, tmpl, 20, 25.0)
    p = tmpl.embed_many(tri, bary)
    d = np.linalg.norm(p[:, None] - p[None], axis=2) + np.eye(20) * 1e9
    assert d.min() >= 25.0
    with pytest.raises(SynthError):
        sample_lesions(rng, tmpl, 500, 80.0, max_tries=2000)


def test_zero_noise_deformed_template_matches_scan(tmpl):
    fx = _make(tmpl, 2, registration_noise_mm=0.0)
    assert np.allclose(fx.deformed_src.vertices, fx.src_mesh.vertices, atol=1e-9)


def test_tangent_noise_rms_and_tangency(tmpl, rng):
    u = smooth_tangent_field(rng, tmpl, 3.0)
    assert np.sqrt(np.mean(np.sum(u * u, axis=1))) == pytest.approx(3.0)
    assert np.allclose(np.einsum("ij,ij->i", u, tmpl.vertex_normals), 0, atol=1e-9)


def test_parameter_ranges(tmpl):
    with pytest.raises(ValueError):
        _make(tmpl, deform_params={"bend": 5.0})
    with pytest.raises(ValueError):
        _make(tmpl, deform_params={"shear": 0.1})
    with pytest.raises(ValueError):
        _make(tmpl, texture_mode="random")


def test_mid_range_does_not_fold(tmpl):
    from lesionflow.synth import random_deformation

    for seed in range(5):
        d = random_deformation(np.random.default_rng(seed), tmpl, MID_RANGE)
        assert count_flipped(tmpl, d) == 0


def test_reflection_flips_every_face(tmpl):
    class Mirror:
        def __call__(self, p, n):
            return p * [-1.0, 1.0, 1.0]

    assert count_flipped(tmpl, Mirror()) == tmpl.n_triangles
    ident = Deformation(np.zeros(3), [0, 0, 1.0], 100.0)
    assert np.allclose(ident(tmpl.vertices, tmpl.vertex_normals), tmpl.vertices)


def test_texture_modes(tmpl):
    same = _make(tmpl, 5)
    assert np.array_equal(same.src_mesh.vertex_colors, same.tgt_mesh.vertex_colors)
    diff = _make(tmpl, 5, texture_mode="inconsistent")
    assert not np.allclose(diff.src_mesh.vertex_colors, diff.tgt_mesh.vertex_colors)


def test_write_subject(tmp_path, tmpl):
    fx = _make(tmpl, 6)
    files = write_subject(fx, tmp_path)
    for name in files.values():
        assert (tmp_path / name).exists()
    m = io.read_mesh(tmp_path / files["src_mesh"])
    assert np.allclose(m.vertex_colors, fx.src_mesh.vertex_colors, atol=1 / 255)
    assert io.read_toml(tmp_path / "manifest.toml")["subject"]["seed"] == 6
