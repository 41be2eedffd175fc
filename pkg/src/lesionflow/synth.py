"""Synthetic subjects with known lesion correspondence.

A subject consists of two smooth space deformations of a template (bend
about the long axis, twist, Gaussian bulges).  The scans reuse the template
connectivity, so a lesion placed at a template surface point has the same
(triangle, barycentric) location on both scans.  Deformed templates
emulate imperfect registration: the template is first slid along itself by
a smooth random tangential field, then deformed, then offset along the
normals.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .correspondence import DeformedTemplate
from .metrics import GroundTruth
from .mesh import Mesh
from .signals import LesionSet
from .spatial import closest_points
from .templates import make_template

logger = logging.getLogger(__name__)

# documented stable ranges (capsule template, millimeters / radians)
DEFORM_RANGES = {"bend": (0.0, 1.0), "twist": (0.0, 0.8), "bulge": (0.0, 15.0)}
MID_RANGE = {"bend": 0.5, "twist": 0.4, "bulge": 8.0}
NOISE_CORRELATION_MM = 60.0
N_BULGES = 4
BULGE_SIGMA_MM = 40.0


class SynthError(ValueError):
    """Infeasible generator request."""


@dataclass
class SubjectFixture:
    template: Mesh
    deformed_src: DeformedTemplate
    deformed_tgt: DeformedTemplate
    src_mesh: Mesh
    tgt_mesh: Mesh
    lesions_src: LesionSet
    lesions_tgt: LesionSet
    gt: GroundTruth
    true_tri: np.ndarray
    true_bary: np.ndarray
    params: dict = field(default_factory=dict)

    def true_location(self, side, lesion_id):
        """Template (tri, bary) of a lesion; identical for both members of a pair."""
        lesions = self.lesions_src if side == "src" else self.lesions_tgt
        i = lesions.ids.index(lesion_id)
        return int(lesions.tri[i]), lesions.bary[i].copy()


class Deformation:
    """Smooth map of 3D space: bulges along template normals, then twist, then bend.

    Parameters
    ----------
    axis_origin, axis : ndarray
        Long axis of the template (unit ``axis``).
    bend : float
        Total bend angle (rad) over ``length``, in the plane at ``bend_azimuth``.
    twist : float
        Total twist (rad) over ``length``.
    bulges : list of (center, amplitude_mm, sigma_mm)
    """

    def __init__(self, axis_origin, axis, length, bend=0.0, bend_azimuth=0.0, twist=0.0, bulges=()):
        self.origin = np.asarray(axis_origin, dtype=np.float64)
        self.axis = np.asarray(axis, dtype=np.float64) / np.linalg.norm(axis)
        helper = np.array([1.0, 0.0, 0.0]) if abs(self.axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = helper - (helper @ self.axis) * self.axis
        self.e1 = e1 / np.linalg.norm(e1)
        self.e2 = np.cross(self.axis, self.e1)
        self.length = float(length)
        self.bend = float(bend)
        self.bend_azimuth = float(bend_azimuth)
        self.twist = float(twist)
        self.bulges = [(np.asarray(c, dtype=np.float64), float(a), float(s)) for c, a, s in bulges]

    def __call__(self, points, normals):
        p = np.asarray(points, dtype=np.float64)
        for c, amp, sig in self.bulges:
            if amp != 0.0:
                p = p + amp * np.exp(-np.sum((points - c) ** 2, axis=1) / (2 * sig * sig))[:, None] * normals
        d = p - self.origin
        s = d @ self.axis
        a = d @ self.e1
        b = d @ self.e2
        if self.twist != 0.0:
            th = self.twist * s / self.length
            a, b = a * np.cos(th) - b * np.sin(th), a * np.sin(th) + b * np.cos(th)
        if self.bend != 0.0:
            ca, sa = np.cos(self.bend_azimuth), np.sin(self.bend_azimuth)
            u, w = ca * a + sa * b, -sa * a + ca * b
            k = self.bend / self.length
            r = 1.0 / k - u
            u, s = 1.0 / k - r * np.cos(k * s), r * np.sin(k * s)
            a, b = ca * u - sa * w, sa * u + ca * w
        return self.origin + s[:, None] * self.axis + a[:, None] * self.e1 + b[:, None] * self.e2


def count_flipped(template, deform, eps=1e-3):
    """Faces whose orientation the deformation reverses.

    Each face is thickened into a thin prism along its normal; the sign of
    the deformed prism volume must stay positive.
    """
    c = template.corners
    cen = c.mean(axis=1)
    nv = template.vertex_normals
    fn = template.face_normals
    D = [deform(c[:, k], nv[template.triangles[:, k]]) for k in range(3)]
    top = deform(cen + eps * fn, template.face_normals)
    base = deform(cen, template.face_normals)
    vol = np.einsum("ij,ij->i", np.cross(D[1] - D[0], D[2] - D[0]), top - base)
    return int(np.sum(vol <= 0))


def _long_axis(template):
    V = template.vertices
    lo, hi = V.min(axis=0), V.max(axis=0)
    k = int(np.argmax(hi - lo))
    axis = np.zeros(3)
    axis[k] = 1.0
    return 0.5 * (lo + hi), axis, float(hi[k] - lo[k])


def random_deformation(rng, template, params):
    origin, axis, length = _long_axis(template)
    bend = params.get("bend", 0.0) * rng.uniform(0.5, 1.5)
    twist = params.get("twist", 0.0) * rng.uniform(-1.0, 1.0)
    bulges = []
    for _ in range(N_BULGES):
        c = template.vertices[rng.integers(template.n_vertices)]
        amp = params.get("bulge", 0.0) * rng.uniform(0.5, 1.0) * rng.choice([-1.0, 1.0])
        bulges.append((c, amp, BULGE_SIGMA_MM))
    return Deformation(origin, axis, length, bend=bend, bend_azimuth=rng.uniform(0, 2 * np.pi),
                       twist=twist, bulges=bulges)


def smooth_tangent_field(rng, template, rms, correlation=NOISE_CORRELATION_MM, n_centers=24):
    """Random smooth tangent displacement with the given RMS over vertices."""
    V = template.vertices
    if rms == 0:
        return np.zeros_like(V)
    centers = V[rng.integers(template.n_vertices, size=n_centers)]
    amps = rng.normal(size=(n_centers, 3))
    d2 = np.sum((V[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    u = np.exp(-d2 / (2 * correlation ** 2)) @ amps
    n = template.vertex_normals
    u -= np.einsum("ij,ij->i", u, n)[:, None] * n
    return u * (rms / np.sqrt(np.mean(np.sum(u * u, axis=1))))


def smooth_scalar_field(rng, template, rms, correlation=NOISE_CORRELATION_MM, n_centers=24):
    V = template.vertices
    if rms == 0:
        return np.zeros(len(V))
    centers = V[rng.integers(template.n_vertices, size=n_centers)]
    d2 = np.sum((V[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    s = np.exp(-d2 / (2 * correlation ** 2)) @ rng.normal(size=n_centers)
    return s * (rms / np.sqrt(np.mean(s * s)))


def sample_lesions(rng, template, n, spacing, max_tries=200_000):
    """Uniform-by-area surface points with pairwise Euclidean separation >= ``spacing``.

    Geodesic distance is never below Euclidean distance, so the geodesic
    spacing holds as well.
    """
    area = template.face_areas
    cdf = np.cumsum(area) / area.sum()
    tris, barys, pts = [], [], []
    tries = 0
    while len(tris) < n:
        tries += 1
        if tries > max_tries:
            raise SynthError(f"could not place {n} lesions with spacing {spacing} mm "
                             f"(placed {len(tris)}); lower n_lesions or spacing")
        t = int(min(np.searchsorted(cdf, rng.random()), len(cdf) - 1))
        r1, r2 = rng.random(2)
        s = np.sqrt(r1)
        b = np.array([1 - s, s * (1 - r2), s * r2])
        p = b @ template.corners[t]
        if pts and np.min(np.linalg.norm(np.asarray(pts) - p, axis=1)) < spacing:
            continue
        tris.append(t)
        barys.append(b)
        pts.append(p)
    return np.array(tris, dtype=np.int64).reshape(-1), np.array(barys).reshape(-1, 3)


def procedural_texture(rng, template, n_waves=6):
    """Multi-frequency sinusoidal RGB pattern attached to template positions."""
    V = template.vertices
    out = np.full((len(V), 3), 0.5)
    for c in range(3):
        for _ in range(n_waves):
            k = rng.normal(size=3)
            k *= 2 * np.pi / (np.linalg.norm(k) * rng.uniform(30.0, 120.0))
            out[:, c] += rng.uniform(0.03, 0.08) * np.sin(V @ k + rng.uniform(0, 2 * np.pi))
    return np.clip(out, 0.0, 1.0)


def make_subject(seed, deform_params=None, n_lesions=100, texture_mode="consistent",
                 registration_noise_mm=3.0, template=None, spacing_mm=15.0):
    """Generate a subject fixture.

    Parameters
    ----------
    seed : int
    deform_params : dict, optional
        ``bend`` and ``twist`` (rad) and ``bulge`` (mm) amplitudes; missing
        keys are zero.  Defaults to :data:`MID_RANGE`.
    n_lesions : int
        Lesions per scan (all paired).
    texture_mode : {"consistent", "inconsistent"}
    registration_noise_mm : float
        RMS tangential slide of each deformed template; the normal offset
        has a third of this RMS.
    template : Mesh, optional
        Defaults to the capsule template with about 10K vertices.
    spacing_mm : float
        Minimum lesion separation.
    """
    if texture_mode not in ("consistent", "inconsistent"):
        raise ValueError("texture_mode must be consistent or inconsistent")
    params = dict(MID_RANGE if deform_params is None else deform_params)
    for k, v in params.items():
        if k not in DEFORM_RANGES:
            raise ValueError(f"unknown deformation parameter {k!r}")
        lo, hi = DEFORM_RANGES[k]
        if not lo <= abs(v) <= hi:
            raise ValueError(f"{k}={v} outside the stable range [{lo}, {hi}]")
    if template is None:
        template = make_template("capsule", 90)
    rng = np.random.default_rng(seed)
    nv = template.vertex_normals
    base_tex = procedural_texture(rng, template)

    sides = {}
    for side in ("src", "tgt"):
        deform = random_deformation(rng, template, params)
        flipped = count_flipped(template, deform)
        if flipped:
            raise SynthError(f"{side} deformation folds {flipped} faces; reduce amplitudes")
        V = deform(template.vertices, nv)
        slide = smooth_tangent_field(rng, template, registration_noise_mm)
        offset = smooth_scalar_field(rng, template, registration_noise_mm / 3.0)
        t, b, _ = closest_points(template, template.vertices + slide)
        slid = template.embed_many(t, b)
        slid_n = template.interpolate(nv, t, b)
        Vd = deform(slid, slid_n / np.linalg.norm(slid_n, axis=1, keepdims=True))
        scan = template.with_vertices(V, name=f"{side}_mesh")
        Vd = Vd + offset[:, None] * scan.vertex_normals
        colors = base_tex
        if side == "tgt" and texture_mode == "inconsistent":
            contrast = rng.uniform(0.7, 1.3, size=3)
            shift = rng.uniform(-0.1, 0.1, size=3)
            colors = np.clip(0.5 + contrast * (base_tex - 0.5) + shift, 0.0, 1.0)
        sides[side] = (Mesh(V, template.triangles, vertex_colors=colors, name=f"{side}_mesh"),
                       DeformedTemplate(Vd, name=f"{side}_deformed"))

    tri, bary = sample_lesions(rng, template, n_lesions, spacing_mm)
    src_ids = [f"s{i:03d}" for i in range(n_lesions)]
    perm = rng.permutation(n_lesions)
    tgt_ids = [f"t{i:03d}" for i in range(n_lesions)]
    # target lesion j sits at the location of source lesion perm[j]
    lesions_src = LesionSet("src_mesh", src_ids, tri, bary)
    lesions_tgt = LesionSet("tgt_mesh", tgt_ids, tri[perm], bary[perm])
    gt = GroundTruth(sorted((src_ids[perm[j]], tgt_ids[j]) for j in range(n_lesions)))
    info = {"seed": int(seed), "deform": params, "n_lesions": int(n_lesions),
            "texture_mode": texture_mode, "registration_noise_mm": float(registration_noise_mm),
            "spacing_mm": float(spacing_mm)}
    return SubjectFixture(template, sides["src"][1], sides["tgt"][1], sides["src"][0], sides["tgt"][0],
                          lesions_src, lesions_tgt, gt, tri, bary, info)


def write_subject(fixture, out_dir):
    """Write meshes (PLY), deformed templates (PLY), lesion and GT JSON, and a manifest TOML."""
    import os

    from . import io

    os.makedirs(out_dir, exist_ok=True)
    fx = fixture
    files = {
        "template": "template.ply", "deformed_src": "deformed_src.ply", "deformed_tgt": "deformed_tgt.ply",
        "src_mesh": "src_mesh.ply", "tgt_mesh": "tgt_mesh.ply",
        "lesions_src": "lesions_src.json", "lesions_tgt": "lesions_tgt.json", "ground_truth": "gt.json",
    }
    io.write_ply(os.path.join(out_dir, files["template"]), fx.template.vertices, fx.template.triangles)
    for key, d in (("deformed_src", fx.deformed_src), ("deformed_tgt", fx.deformed_tgt)):
        io.write_ply(os.path.join(out_dir, files[key]), d.vertices, fx.template.triangles)
    for key, m in (("src_mesh", fx.src_mesh), ("tgt_mesh", fx.tgt_mesh)):
        io.write_ply(os.path.join(out_dir, files[key]), m.vertices, m.triangles, colors=m.vertex_colors)
    fx.lesions_src.save(os.path.join(out_dir, files["lesions_src"]))
    fx.lesions_tgt.save(os.path.join(out_dir, files["lesions_tgt"]))
    io.write_json(os.path.join(out_dir, files["ground_truth"]), fx.gt.to_json())
    io.write_toml(os.path.join(out_dir, "manifest.toml"), {"subject": fx.params, "files": files})
    return files
