"""Coarse vertex-to-surface-point maps through a deformed template.

A deformed template shares the template's triangles, so a (triangle,
barycentric) location found on the deformed geometry is also a location on
the template.  Maps are directional; no inverse is ever formed.
"""

from dataclasses import dataclass

import numpy as np

from . import io
from .mesh import Mesh, MeshError, SurfacePoint
from .spatial import closest_points


@dataclass
class CorrespondenceMap:
    """Per-vertex table of surface points on another mesh.

    Attributes
    ----------
    from_id, to_id : str
        Mesh identifiers.
    tri : ndarray of int64, shape (n,)
    bary : ndarray of float64, shape (n, 3)
    """

    from_id: str
    to_id: str
    tri: np.ndarray
    bary: np.ndarray

    def __post_init__(self):
        self.tri = np.ascontiguousarray(self.tri, dtype=np.int64).reshape(-1)
        self.bary = np.ascontiguousarray(self.bary, dtype=np.float64).reshape(-1, 3)
        if len(self.tri) != len(self.bary):
            raise ValueError("triangle and barycentric arrays differ in length")

    def __len__(self):
        return len(self.tri)

    @property
    def rows(self):
        return [SurfacePoint(t, tuple(b)) for t, b in zip(self.tri, self.bary)]

    def check(self, from_mesh, to_mesh):
        if len(self) != from_mesh.n_vertices:
            raise ValueError(f"map has {len(self)} rows but {from_mesh.name} has "
                             f"{from_mesh.n_vertices} vertices")
        if len(self) and (self.tri.min() < 0 or self.tri.max() >= to_mesh.n_triangles):
            raise ValueError(f"map row references a triangle outside {to_mesh.name}")

    def positions(self, to_mesh):
        """3D positions of all rows on ``to_mesh``."""
        return to_mesh.embed_many(self.tri, self.bary)

    def save(self, path, config_hash=None):
        io.write_map_blob(path, self.tri, self.bary, self.from_id, self.to_id, config_hash)

    @classmethod
    def load(cls, path):
        header, tri, bary = io.read_map_blob(path)
        out = cls(header["from"], header["to"], tri, bary)
        out.config_hash = header.get("config_hash")
        return out


@dataclass
class DeformedTemplate:
    """Template geometry registered to a scan (same connectivity)."""

    vertices: np.ndarray
    name: str = "deformed"

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)

    def as_mesh(self, template):
        if self.vertices.shape[0] != template.n_vertices:
            raise MeshError(f"deformed template has {self.vertices.shape[0]} vertices, "
                            f"template has {template.n_vertices}")
        cached = getattr(self, "_mesh", None)
        if cached is None or cached.n_triangles != template.n_triangles:
            # registration output may contain slivers; it is only used for projection
            cached = Mesh(self.vertices, template.triangles, name=self.name, validate=False)
            self._mesh = cached
        return cached

    @classmethod
    def from_mesh(cls, mesh, template):
        if mesh.n_triangles != template.n_triangles or not np.array_equal(mesh.triangles, template.triangles):
            raise MeshError(f"{mesh.name} does not share the template connectivity")
        return cls(mesh.vertices, name=mesh.name)


def coarse_map_to_template(input_mesh, deformed, template):
    """Map every input vertex to the template via its nearest point on ``deformed``."""
    dm = deformed.as_mesh(template)
    tri, bary, _ = closest_points(dm, input_mesh.vertices)
    return CorrespondenceMap(input_mesh.name, template.name, tri, bary)


def coarse_map_from_template(template, deformed, input_mesh):
    """Map every template vertex to the nearest point of ``input_mesh`` from its deformed position."""
    dm = deformed.as_mesh(template)
    tri, bary, _ = closest_points(input_mesh, dm.vertices)
    return CorrespondenceMap(template.name, input_mesh.name, tri, bary)


def map_points(cmap, from_mesh, to_mesh, tri, bary):
    """Batched surface-point map ``from_mesh -> to_mesh``.

    The images of the three corners are blended with the point's barycentric
    weights and the blend is projected onto ``to_mesh``.
    """
    tri = np.asarray(tri, dtype=np.int64).reshape(-1)
    bary = np.asarray(bary, dtype=np.float64).reshape(-1, 3)
    if len(tri) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 3))
    images = cmap.positions(to_mesh)
    corners = from_mesh.triangles[tri]
    blend = np.einsum("nk,nkd->nd", bary, images[corners])
    out_tri, out_bary, _ = closest_points(to_mesh, blend)
    return out_tri, out_bary


def map_point(cmap, from_mesh, to_mesh, p):
    """Image of the surface point ``p`` under ``cmap`` (see :func:`map_points`)."""
    if not 0 <= p.triangle < from_mesh.n_triangles:
        raise IndexError(f"triangle {p.triangle} out of range for {from_mesh!r}")
    t, b = map_points(cmap, from_mesh, to_mesh, [p.triangle], [p.bary])
    return SurfacePoint(int(t[0]), tuple(b[0]))
