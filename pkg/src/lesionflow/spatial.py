"""Bounding-volume hierarchy and closest-point queries on triangle meshes."""

import numpy as np

from . import kernels
from .mesh import SurfacePoint

LEAF_SIZE = 4


class BVH:
    """Axis-aligned BVH over triangles, built by median split on centroids.

    Construction is deterministic: split axis is the longest extent of the
    centroid box and ties in the sort are broken by triangle index.
    """

    def __init__(self, corners, leaf_size=LEAF_SIZE):
        self.tri_pts = np.ascontiguousarray(corners, dtype=np.float64)
        m = self.tri_pts.shape[0]
        tri_lo = self.tri_pts.min(axis=1)
        tri_hi = self.tri_pts.max(axis=1)
        cent = self.tri_pts.mean(axis=1)
        order = np.arange(m, dtype=np.int64)
        lo, hi, child, start, count = [], [], [], [], []

        def new_node():
            lo.append(None)
            hi.append(None)
            child.append([-1, -1])
            start.append(0)
            count.append(0)
            return len(lo) - 1

        root = new_node()
        stack = [(root, 0, m)]
        while stack:
            node, s, e = stack.pop()
            idx = order[s:e]
            lo[node] = tri_lo[idx].min(axis=0)
            hi[node] = tri_hi[idx].max(axis=0)
            if e - s <= leaf_size:
                start[node] = s
                count[node] = e - s
                continue
            c = cent[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            srt = np.lexsort((idx, c[:, axis]))
            order[s:e] = idx[srt]
            mid = s + (e - s) // 2
            left, right = new_node(), new_node()
            child[node] = [left, right]
            stack.append((right, mid, e))
            stack.append((left, s, mid))

        self.node_lo = np.ascontiguousarray(lo, dtype=np.float64)
        self.node_hi = np.ascontiguousarray(hi, dtype=np.float64)
        self.node_child = np.ascontiguousarray(child, dtype=np.int64)
        self.node_start = np.ascontiguousarray(start, dtype=np.int64)
        self.node_count = np.ascontiguousarray(count, dtype=np.int64)
        self.tri_order = order

    def query(self, points, backend=None):
        """Closest points for an (n, 3) array; returns ``(tri, bary, dist)``."""
        q = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        impl = backend or kernels
        tri, bary, d2 = impl.closest_points(self.node_lo, self.node_hi, self.node_child,
                                            self.node_start, self.node_count, self.tri_order,
                                            self.tri_pts, q)
        return tri, bary, np.sqrt(d2)


def closest_points(mesh, points):
    """Batched closest surface points: ``(tri, bary, distance)``."""
    return mesh.bvh.query(points)


def closest_surface_point(mesh, q):
    """Surface point of ``mesh`` nearest to the 3D position ``q``.

    Ties go to the lowest triangle index.
    """
    tri, bary, _ = mesh.bvh.query(np.asarray(q, dtype=np.float64).reshape(1, 3))
    return SurfacePoint(int(tri[0]), tuple(bary[0]))


def brute_force_closest(mesh, points):
    """Exhaustive reference: project every query onto every triangle (numpy).

    Used as the independent oracle for the BVH path.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    c = mesh.corners
    a, b, cc = c[:, 0], c[:, 1], c[:, 2]
    out_tri = np.empty(len(pts), dtype=np.int64)
    out_bary = np.empty((len(pts), 3))
    out_d = np.empty(len(pts))
    for i, p in enumerate(pts):
        bary = _project_all(p, a, b, cc)
        q = bary[:, [0]] * a + bary[:, [1]] * b + bary[:, [2]] * cc
        d = np.linalg.norm(q - p, axis=1)
        t = int(np.argmin(d))
        out_tri[i], out_bary[i], out_d[i] = t, bary[t], d[t]
    return out_tri, out_bary, out_d


def _project_all(p, a, b, c):
    # 2D parametric projection then clamping to the closest edge/vertex region
    e0, e1 = b - a, c - a
    v = p - a
    d00 = np.einsum("ij,ij->i", e0, e0)
    d01 = np.einsum("ij,ij->i", e0, e1)
    d11 = np.einsum("ij,ij->i", e1, e1)
    d20 = np.einsum("ij,ij->i", e0, v)
    d21 = np.einsum("ij,ij->i", e1, v)
    den = d00 * d11 - d01 * d01
    s = (d11 * d20 - d01 * d21) / den
    t = (d00 * d21 - d01 * d20) / den
    inside = (s >= 0) & (t >= 0) & (s + t <= 1)
    bary = np.stack([1 - s - t, s, t], axis=1)
    best = np.where(inside[:, None], bary, np.nan)
    best_d = np.where(inside, np.linalg.norm(bary[:, [0]] * a + bary[:, [1]] * b + bary[:, [2]] * c - p, axis=1), np.inf)
    for (i, j) in ((0, 1), (1, 2), (2, 0)):
        P = (a, b, c)
        seg = P[j] - P[i]
        u = np.clip(np.einsum("ij,ij->i", p - P[i], seg) / np.einsum("ij,ij->i", seg, seg), 0.0, 1.0)
        q = P[i] + u[:, None] * seg
        d = np.linalg.norm(q - p, axis=1)
        cand = np.zeros_like(bary)
        cand[:, i] = 1 - u
        cand[:, j] = u
        better = d < best_d
        best = np.where(better[:, None], cand, best)
        best_d = np.where(better, d, best_d)
    return best
