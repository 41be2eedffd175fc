"""Triangle mesh container, surface points, and discrete operators.

All lengths are millimeters.  A :class:`Mesh` is immutable after
construction; derived quantities are computed lazily and cached.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import sparse

from .solvers import conjugate_gradient

BARY_TOL = 1e-9
_BARY_SUM_TOL = 1e-6
_COT_CLAMP = 1e4


class MeshError(ValueError):
    """Input mesh violates a structural invariant."""


@dataclass(frozen=True)
class SurfacePoint:
    """A point on a mesh: triangle index plus barycentric coordinates.

    Coordinates are clipped at ``-1e-9`` and renormalized to sum to one;
    anything further off raises ``ValueError``.
    """

    triangle: int
    bary: tuple

    def __post_init__(self):
        b = np.asarray(self.bary, dtype=np.float64).reshape(-1)
        if b.shape != (3,) or not np.all(np.isfinite(b)):
            raise ValueError(f"barycentric triple expected, got {self.bary!r}")
        if abs(b.sum() - 1.0) > _BARY_SUM_TOL:
            raise ValueError(f"barycentric coordinates sum to {b.sum():.9g}, not 1")
        if np.any(b < -BARY_TOL) or np.any(b > 1.0 + BARY_TOL):
            raise ValueError(f"barycentric coordinates out of [0, 1]: {tuple(b)}")
        b = np.clip(b, 0.0, 1.0)
        b = b / b.sum()
        object.__setattr__(self, "triangle", int(self.triangle))
        object.__setattr__(self, "bary", tuple(float(x) for x in b))

    @classmethod
    def at_vertex(cls, mesh, vertex):
        """Surface point sitting on ``vertex`` in its lowest-index triangle."""
        tri = int(mesh.vertex_first_face[vertex])
        bary = [0.0, 0.0, 0.0]
        bary[int(np.nonzero(mesh.triangles[tri] == vertex)[0][0])] = 1.0
        return cls(tri, tuple(bary))

    def key(self):
        """Lexicographic ordering key."""
        return (self.triangle,) + self.bary


@dataclass(frozen=True)
class TangentVector:
    """Tangent vector given by 2 components in the basis at its base.

    ``base`` is either a vertex index (vertex tangent basis) or a
    :class:`SurfacePoint` (basis of its triangle's plane).
    """

    base: object
    components: tuple

    def to_3d(self, mesh):
        c = np.asarray(self.components, dtype=np.float64)
        if isinstance(self.base, SurfacePoint):
            basis = mesh.face_basis[self.base.triangle]
        else:
            basis = mesh.vertex_basis[int(self.base)]
        return basis @ c


class FEMOperators(NamedTuple):
    mass: sparse.dia_matrix
    stiffness: sparse.csr_matrix
    gradient: sparse.csr_matrix


def as_points(tri, bary):
    """Validate and normalize batched surface points to ``(int64[n], float64[n, 3])``."""
    tri = np.asarray(tri, dtype=np.int64).reshape(-1)
    bary = np.asarray(bary, dtype=np.float64).reshape(-1, 3)
    bary = np.clip(bary, 0.0, None)
    bary = bary / bary.sum(axis=1, keepdims=True)
    return tri, bary


class Mesh:
    """Indexed, consistently oriented triangle surface.

    Parameters
    ----------
    vertices : array_like, shape (n, 3)
        Positions in millimeters.
    triangles : array_like, shape (m, 3)
        Vertex indices, counter-clockwise seen from outside.
    vertex_colors : array_like, shape (n, 3), optional
        RGB in [0, 1].
    corner_uvs : array_like, shape (m, 3, 2), optional
        Per-corner texture coordinates; requires ``texture``.
    texture : ndarray, shape (h, w, 3), optional
        Texture raster in [0, 1].
    name : str, optional
        Identifier carried into serialized artifacts.
    validate : bool
        Check the structural invariants (raises :class:`MeshError`).
    """

    def __init__(self, vertices, triangles, vertex_colors=None, corner_uvs=None,
                 texture=None, name="mesh", validate=True):
        self.vertices = _frozen(np.asarray(vertices, dtype=np.float64).reshape(-1, 3))
        self.triangles = _frozen(np.asarray(triangles, dtype=np.int64).reshape(-1, 3))
        self.vertex_colors = None if vertex_colors is None else _frozen(
            np.asarray(vertex_colors, dtype=np.float64).reshape(-1, 3))
        self.corner_uvs = None if corner_uvs is None else _frozen(
            np.asarray(corner_uvs, dtype=np.float64).reshape(-1, 3, 2))
        self.texture = None if texture is None else _frozen(np.asarray(texture, dtype=np.float64))
        self.name = name
        self._cache = {}
        if validate:
            self.validate()

    def __repr__(self):
        return f"Mesh({self.name!r}, {self.n_vertices} vertices, {self.n_triangles} triangles)"

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def with_vertices(self, vertices, name=None, validate=False):
        """Same connectivity, new positions (colors are dropped)."""
        return Mesh(vertices, self.triangles, name=name or self.name, validate=validate)

    # -- validation -------------------------------------------------------

    def validate(self):
        n, m = self.n_vertices, self.n_triangles
        if n == 0 or m == 0:
            raise MeshError("mesh is empty")
        F = self.triangles
        if F.min() < 0 or F.max() >= n:
            raise MeshError("triangle references a vertex index out of range")
        if np.any(F[:, 0] == F[:, 1]) or np.any(F[:, 1] == F[:, 2]) or np.any(F[:, 0] == F[:, 2]):
            raise MeshError("triangle with repeated vertex index")
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("non-finite vertex position")
        keys = self._halfedge_keys
        if np.unique(keys).size != keys.size:
            raise MeshError("inconsistent orientation or non-manifold edge "
                            "(a directed edge appears twice)")
        e = np.sort(np.stack([F, np.roll(F, -1, axis=1)], axis=-1).reshape(-1, 2), axis=1)
        _, counts = np.unique(e[:, 0] * n + e[:, 1], return_counts=True)
        if counts.max() > 2:
            raise MeshError("non-manifold edge shared by more than two triangles")
        diag = self.bbox_diagonal
        if self.face_areas.min() <= 1e-12 * diag * diag:
            raise MeshError(f"degenerate triangle {int(np.argmin(self.face_areas))}")
        if self.vertex_colors is not None and self.vertex_colors.shape[0] != n:
            raise MeshError("vertex_colors length does not match vertex count")
        if self.corner_uvs is not None and self.corner_uvs.shape[0] != m:
            raise MeshError("corner_uvs length does not match triangle count")

    # -- basic geometry ---------------------------------------------------

    @cached_property
    def _halfedge_keys(self):
        F = self.triangles
        n = np.int64(self.n_vertices)
        return (F * n + np.roll(F, -1, axis=1)).reshape(-1)

    @cached_property
    def corners(self):
        """Corner positions, shape (m, 3, 3)."""
        return _frozen(np.ascontiguousarray(self.vertices[self.triangles]))

    @cached_property
    def _face_cross(self):
        c = self.corners
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    @cached_property
    def face_areas(self):
        return _frozen(0.5 * np.linalg.norm(self._face_cross, axis=1))

    @cached_property
    def face_normals(self):
        nrm = np.linalg.norm(self._face_cross, axis=1, keepdims=True)
        return _frozen(np.ascontiguousarray(self._face_cross / np.where(nrm > 0, nrm, 1.0)))

    @cached_property
    def bbox_diagonal(self):
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    @cached_property
    def surface_area(self):
        return float(self.face_areas.sum())

    @cached_property
    def edges(self):
        """Unique undirected edges ``(i, j)`` with ``i < j``, sorted."""
        F = self.triangles
        e = np.sort(np.stack([F, np.roll(F, -1, axis=1)], axis=-1).reshape(-1, 2), axis=1)
        return _frozen(np.unique(e, axis=0))

    @cached_property
    def mean_edge_length(self):
        e = self.edges
        return float(np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1).mean())

    @cached_property
    def face_adjacency(self):
        """``adj[f, k]``: triangle across the edge opposite corner ``k`` (-1 on the boundary)."""
        F = self.triangles
        n = np.int64(self.n_vertices)
        a = np.roll(F, -1, axis=1)  # corner k+1
        b = np.roll(F, -2, axis=1)  # corner k+2
        keys = self._halfedge_keys  # half-edge (k -> k+1) stored at slot 3f+k
        order = np.argsort(keys, kind="stable")
        skeys = keys[order]
        twin = (b * n + a).reshape(-1)  # twin of edge (k+1 -> k+2)
        pos = np.searchsorted(skeys, twin)
        pos = np.minimum(pos, skeys.size - 1)
        found = skeys[pos] == twin
        adj = np.where(found, order[pos] // 3, -1).reshape(-1, 3)
        return _frozen(np.ascontiguousarray(adj.astype(np.int64)))

    @cached_property
    def vertex_boundary(self):
        adj = self.face_adjacency
        F = self.triangles
        bnd = np.zeros(self.n_vertices, dtype=np.uint8)
        f, k = np.nonzero(adj < 0)
        bnd[F[f, (k + 1) % 3]] = 1
        bnd[F[f, (k + 2) % 3]] = 1
        return _frozen(bnd)

    @cached_property
    def corner_angles(self):
        c = self.corners
        out = np.empty((self.n_triangles, 3))
        for k in range(3):
            u = c[:, (k + 1) % 3] - c[:, k]
            v = c[:, (k + 2) % 3] - c[:, k]
            out[:, k] = np.arctan2(np.linalg.norm(np.cross(u, v), axis=1), np.einsum("ij,ij->i", u, v))
        return _frozen(out)

    @cached_property
    def vertex_angle_sum(self):
        return _frozen(np.bincount(self.triangles.reshape(-1), self.corner_angles.reshape(-1),
                                   minlength=self.n_vertices))

    @cached_property
    def vertex_first_face(self):
        first = np.full(self.n_vertices, self.n_triangles, dtype=np.int64)
        np.minimum.at(first, self.triangles.reshape(-1), np.repeat(np.arange(self.n_triangles), 3))
        return _frozen(first)

    @cached_property
    def vertex_normals(self):
        """Angle-weighted average of incident face normals."""
        acc = np.zeros((self.n_vertices, 3))
        for k in range(3):
            np.add.at(acc, self.triangles[:, k], self.face_normals * self.corner_angles[:, k:k + 1])
        return _frozen(acc / np.linalg.norm(acc, axis=1, keepdims=True))

    @cached_property
    def vertex_basis(self):
        """Orthonormal tangent basis per vertex, shape (n, 3, 2).

        ``e1`` is the first incident edge (lowest-index triangle, edge to the
        next corner) projected into the tangent plane; ``e2 = n x e1``.
        """
        nrm = self.vertex_normals
        f = self.vertex_first_face
        tri = self.triangles[f]
        k = np.argmax(tri == np.arange(self.n_vertices)[:, None], axis=1)
        nxt = tri[np.arange(self.n_vertices), (k + 1) % 3]
        e = self.vertices[nxt] - self.vertices
        e1 = e - np.einsum("ij,ij->i", e, nrm)[:, None] * nrm
        e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
        e2 = np.cross(nrm, e1)
        return _frozen(np.stack([e1, e2], axis=-1))

    @cached_property
    def face_basis(self):
        """Orthonormal in-plane basis per triangle, shape (m, 3, 2)."""
        c = self.corners
        e1 = c[:, 1] - c[:, 0]
        e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
        e2 = np.cross(self.face_normals, e1)
        return _frozen(np.stack([e1, e2], axis=-1))

    @cached_property
    def grad_bary(self):
        """Gradients of the three barycentric functions per triangle, shape (m, 3, 3)."""
        c = self.corners
        n = self.face_normals
        two_a = 2.0 * self.face_areas[:, None]
        out = np.empty((self.n_triangles, 3, 3))
        for k in range(3):
            e = c[:, (k + 2) % 3] - c[:, (k + 1) % 3]
            out[:, k] = np.cross(n, e) / two_a
        return _frozen(out)

    # -- FEM ---------------------------------------------------------------

    @cached_property
    def fem(self):
        return _build_fem(self)

    @cached_property
    def lumped_mass(self):
        return _frozen(np.bincount(self.triangles.reshape(-1),
                                   np.repeat(self.face_areas / 3.0, 3),
                                   minlength=self.n_vertices))

    @cached_property
    def cotan_weights(self):
        """Per-edge cotangent weights ``(i, j, w)`` over directed corner slots."""
        c = self.corners
        rows, cols, vals = [], [], []
        F = self.triangles
        for k in range(3):
            u = c[:, (k + 1) % 3] - c[:, k]
            v = c[:, (k + 2) % 3] - c[:, k]
            cot = np.einsum("ij,ij->i", u, v) / np.linalg.norm(np.cross(u, v), axis=1)
            cot = np.clip(cot, -_COT_CLAMP, _COT_CLAMP)
            rows.append(F[:, (k + 1) % 3])
            cols.append(F[:, (k + 2) % 3])
            vals.append(0.5 * cot)
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    @cached_property
    def bvh(self):
        from .spatial import BVH

        return BVH(self.corners)

    # -- point helpers -----------------------------------------------------

    def embed_many(self, tri, bary):
        tri, bary = np.asarray(tri, dtype=np.int64), np.asarray(bary, dtype=np.float64)
        if tri.size and (tri.min() < 0 or tri.max() >= self.n_triangles):
            raise IndexError("triangle index out of range")
        return np.einsum("nk,nkd->nd", bary, self.corners[tri])

    def interpolate(self, values, tri, bary):
        """Barycentric interpolation of per-vertex ``values`` at surface points."""
        vals = np.asarray(values)
        corner_vals = vals[self.triangles[np.asarray(tri, dtype=np.int64)]]
        if vals.ndim == 1:
            return np.einsum("nk,nk->n", bary, corner_vals)
        return np.einsum("nk,nk...->n...", bary, corner_vals)


def _frozen(a):
    a.setflags(write=False)
    return a


def _build_fem(mesh):
    n = mesh.n_vertices
    i, j, w = mesh.cotan_weights
    S = sparse.coo_matrix((np.concatenate([-w, -w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                          shape=(n, n)).tocsr()
    diag = -np.asarray(S.sum(axis=1)).ravel()
    S = (S + sparse.diags(diag)).tocsr()
    S = (0.5 * (S + S.T)).tocsr()
    S.sum_duplicates()
    M = sparse.diags(mesh.lumped_mass)
    gb = mesh.grad_bary  # (m, 3 corners, 3 dims)
    m = mesh.n_triangles
    rows = (3 * np.arange(m)[:, None, None] + np.arange(3)[None, None, :]).repeat(3, axis=1)
    cols = np.broadcast_to(mesh.triangles[:, :, None], (m, 3, 3))
    G = sparse.csr_matrix((gb.reshape(-1), (rows.reshape(-1), cols.reshape(-1))), shape=(3 * m, n))
    return FEMOperators(M, S, G)


def embed(mesh, p):
    """3D position of surface point ``p``."""
    if not 0 <= p.triangle < mesh.n_triangles:
        raise IndexError(f"triangle {p.triangle} out of range for {mesh!r}")
    return np.asarray(p.bary) @ mesh.corners[p.triangle]


def fem_operators(mesh):
    """Lumped mass, cotangent stiffness, and per-face gradient operators.

    The gradient operator maps per-vertex scalars to stacked per-face
    3-vectors (row ``3 f + d`` is component ``d`` on face ``f``).
    """
    return mesh.fem


def heat_diffuse(mesh, signal, time, tol=1e-12, maxiter=None):
    """One implicit Euler heat step: solve ``(M + t S) u = M f``.

    ``signal`` may be 1-D or have one column per channel.
    """
    if time < 0:
        raise ValueError("diffusion time must be non-negative")
    f = np.asarray(signal, dtype=np.float64)
    if time == 0:
        return f.copy()
    M, S, _ = mesh.fem
    A = (M + time * S).tocsr()
    mass = mesh.lumped_mass
    if f.ndim == 1:
        return conjugate_gradient(A, mass * f, x0=f, tol=tol, maxiter=maxiter).x
    cols = [conjugate_gradient(A, mass * f[:, c], x0=f[:, c], tol=tol, maxiter=maxiter).x
            for c in range(f.shape[1])]
    return np.stack(cols, axis=1)


def rotate_into_plane(vectors, n_from, n_to):
    """Rotate tangent vectors by the minimal rotation taking ``n_from`` to ``n_to``."""
    axis = np.cross(n_from, n_to)
    c = np.einsum("ij,ij->i", n_from, n_to)
    ax_w = np.cross(axis, vectors)
    ax_dot = np.einsum("ij,ij->i", axis, vectors)
    denom = np.where(1.0 + c > 1e-12, 1.0 + c, 1e-12)
    out = vectors * c[:, None] + ax_w + axis * (ax_dot / denom)[:, None]
    # remove rounding drift out of the target plane
    out -= np.einsum("ij,ij->i", out, n_to)[:, None] * n_to
    return out


def field_at_points(mesh, vertex_vectors, tri, bary):
    """Evaluate a per-vertex 3D tangent field at surface points.

    Corner vectors are rotated into the triangle plane and blended with the
    barycentric weights.
    """
    tri = np.asarray(tri, dtype=np.int64)
    out = np.zeros((tri.size, 3))
    fn = mesh.face_normals[tri]
    for k in range(3):
        vid = mesh.triangles[tri, k]
        w = rotate_into_plane(vertex_vectors[vid], mesh.vertex_normals[vid], fn)
        out += bary[:, k:k + 1] * w
    return out
