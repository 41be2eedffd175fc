"""Scalar signals on the template: pulled-back texture and lesion likelihood."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import io
from .correspondence import map_points
from .mesh import heat_diffuse
from .spatial import closest_points

logger = logging.getLogger(__name__)

CHANNELS = ("R", "G", "B", "lesion")


@dataclass
class VertexSignal:
    """Per-vertex scalar values with a channel label."""

    mesh_id: str
    values: np.ndarray
    channel: str

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"unknown channel {self.channel!r}")
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)


@dataclass
class LesionSet:
    """Lesion detections on one mesh.

    ``snapped`` marks lesions that were given as 3D positions and moved onto
    the surface at load time.
    """

    mesh_id: str
    ids: list
    tri: np.ndarray
    bary: np.ndarray
    snapped: np.ndarray = field(default=None)

    def __post_init__(self):
        self.ids = [str(i) for i in self.ids]
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("lesion ids must be unique")
        self.tri = np.asarray(self.tri, dtype=np.int64).reshape(-1)
        self.bary = np.asarray(self.bary, dtype=np.float64).reshape(-1, 3)
        if self.snapped is None:
            self.snapped = np.zeros(len(self.ids), dtype=bool)
        if not (len(self.ids) == len(self.tri) == len(self.bary) == len(self.snapped)):
            raise ValueError("lesion arrays differ in length")

    def __len__(self):
        return len(self.ids)

    def check(self, mesh):
        if len(self) == 0:
            return
        if self.tri.min() < 0 or self.tri.max() >= mesh.n_triangles:
            raise ValueError(f"lesion triangle outside {mesh.name}")
        if np.any(self.bary < -1e-9) or np.any(np.abs(self.bary.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("lesion barycentric coordinates are not a convex combination")

    def subset(self, keep_ids):
        keep = set(keep_ids)
        idx = [i for i, name in enumerate(self.ids) if name in keep]
        return LesionSet(self.mesh_id, [self.ids[i] for i in idx], self.tri[idx], self.bary[idx],
                         self.snapped[idx])

    def to_json(self):
        out = []
        for i, name in enumerate(self.ids):
            rec = {"id": name, "tri": int(self.tri[i]), "bary": [float(x) for x in self.bary[i]]}
            if self.snapped[i]:
                rec["snapped"] = True
            out.append(rec)
        return {"mesh": self.mesh_id, "lesions": out}

    @classmethod
    def from_json(cls, data, mesh=None):
        """Parse lesion JSON; ``pos`` entries need ``mesh`` and are snapped to the surface."""
        ids, tri, bary, snapped = [], [], [], []
        pos_idx, pos = [], []
        for rec in data.get("lesions", []):
            ids.append(rec["id"])
            if "tri" in rec:
                tri.append(int(rec["tri"]))
                bary.append([float(x) for x in rec["bary"]])
                snapped.append(bool(rec.get("snapped", False)))
            elif "pos" in rec:
                if mesh is None:
                    raise ValueError("lesions given as positions need the mesh to snap onto")
                pos_idx.append(len(tri))
                pos.append(rec["pos"])
                tri.append(-1)
                bary.append([1.0, 0.0, 0.0])
                snapped.append(True)
            else:
                raise ValueError(f"lesion {rec['id']!r} has neither tri/bary nor pos")
        tri = np.array(tri, dtype=np.int64)
        bary = np.array(bary, dtype=np.float64).reshape(-1, 3)
        if pos:
            t, b, d = closest_points(mesh, np.asarray(pos, dtype=np.float64))
            tri[pos_idx], bary[pos_idx] = t, b
            logger.info("snapped %d lesion positions onto %s (max offset %.3g mm)",
                        len(pos), mesh.name, float(d.max()))
        return cls(data.get("mesh", mesh.name if mesh is not None else ""), ids, tri, bary,
                   np.array(snapped, dtype=bool))

    def save(self, path):
        io.write_json(path, self.to_json())

    @classmethod
    def load(cls, path, mesh=None):
        out = cls.from_json(io.read_json(path), mesh)
        if mesh is not None:
            out.check(mesh)
        return out


def pull_back(template, map_T_to_i, source_signal, source_mesh, channel="lesion"):
    """Evaluate a per-vertex signal of ``source_mesh`` at each template vertex's image."""
    map_T_to_i.check(template, source_mesh)
    f = np.asarray(source_signal, dtype=np.float64)
    if f.shape[0] != source_mesh.n_vertices:
        raise ValueError("source signal length does not match the source mesh")
    vals = source_mesh.interpolate(f, map_T_to_i.tri, map_T_to_i.bary)
    return VertexSignal(template.name, vals, channel)


def texture_channels(template, map_T_to_i, source_mesh):
    """R, G, B signals pulled back to the template (texture baked to vertices first)."""
    rgb = io.bake_vertex_colors(source_mesh)
    return [pull_back(template, map_T_to_i, rgb[:, c], source_mesh, ch)
            for c, ch in enumerate(("R", "G", "B"))]


def default_lesion_time(template):
    return (2.0 * template.mean_edge_length) ** 2


def build_lesion_signal(template, tri, bary, diffusion_time=None, tol=1e-12):
    """Diffused, max-normalized sum of unit deltas at surface points.

    Each delta is spread over its triangle's corners with barycentric weights
    divided by the lumped vertex mass, so it integrates to one.  The result
    does not depend on the order of the points.
    """
    tri = np.asarray(tri, dtype=np.int64).reshape(-1)
    bary = np.asarray(bary, dtype=np.float64).reshape(-1, 3)
    n = template.n_vertices
    if len(tri) == 0:
        return VertexSignal(template.name, np.zeros(n), "lesion")
    t = default_lesion_time(template) if diffusion_time is None else float(diffusion_time)
    if t <= 0:
        raise ValueError("lesion diffusion time must be positive")
    # canonical order makes the floating-point accumulation order-free
    order = np.lexsort((bary[:, 2], bary[:, 1], bary[:, 0], tri))
    verts = template.triangles[tri[order]].reshape(-1)
    w = bary[order].reshape(-1) / template.lumped_mass[verts]
    f = np.zeros(n)
    np.add.at(f, verts, w)
    u = heat_diffuse(template, f, t, tol=tol)
    u = np.maximum(u, 0.0)
    return VertexSignal(template.name, u / u.max(), "lesion")


def map_lesions_to_template(lesions, map_i_to_T, mesh, template):
    """Template (tri, bary) of every lesion, in input order."""
    lesions.check(mesh)
    map_i_to_T.check(mesh, template)
    return map_points(map_i_to_T, mesh, template, lesions.tri, lesions.bary)
