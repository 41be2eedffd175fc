"""Deterministic template meshes: icosphere, capsule, and flat grid."""

import numpy as np

from .mesh import Mesh

CAPSULE_RADIUS = 60.0
CAPSULE_LENGTH = 300.0


def icosphere(subdivisions=3, radius=1.0):
    """Subdivided icosahedron with ``10 * 4**n + 2`` vertices."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    V = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = V[a] + V[b]
                V.append(m / np.linalg.norm(m))
                cache[key] = len(V) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    V = np.array(V) * radius
    F = _orient_outward(V, np.array(faces, dtype=np.int64), lambda c: c)
    return Mesh(V, F, name=f"icosphere{subdivisions}")


def plane(nx=10, ny=None, width=None, height=None, spacing=1.0):
    """Flat grid in the ``z = 0`` plane with ``(nx+1)(ny+1)`` vertices and ``2 nx ny`` triangles."""
    ny = nx if ny is None else ny
    width = nx * spacing if width is None else width
    height = ny * spacing if height is None else height
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    V = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    F = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return Mesh(V, F, name=f"plane{nx}x{ny}")


def capsule(resolution=64, radius=CAPSULE_RADIUS, length=CAPSULE_LENGTH):
    """Cylinder of ``length`` along z with hemispherical caps.

    ``resolution`` is the number of segments around the axis; ring spacing
    along the profile matches the segment length, and alternate rings are
    rotated by half a segment so triangles stay close to equilateral.
    """
    n = int(resolution)
    if n < 6:
        raise ValueError("capsule resolution must be >= 6")
    h = 2 * np.pi * radius / n
    n_cap = max(2, int(round(0.5 * np.pi * radius / h)))
    n_cyl = max(1, int(round(length / h)))
    half = 0.5 * length
    prof = []
    for i in range(1, n_cap + 1):
        th = 0.5 * np.pi * i / n_cap
        prof.append((radius * np.sin(th), half + radius * np.cos(th)))
    for j in range(1, n_cyl):
        prof.append((radius, half - length * j / n_cyl))
    for i in range(n_cap, 0, -1):
        th = 0.5 * np.pi * i / n_cap
        prof.append((radius * np.sin(th), -half - radius * np.cos(th)))
    rings = len(prof)
    V = [(0.0, 0.0, half + radius)]
    for r_i, (r, z) in enumerate(prof):
        off = np.pi / n * (r_i % 2)
        ang = 2 * np.pi * np.arange(n) / n + off
        V.extend(zip(r * np.cos(ang), r * np.sin(ang), np.full(n, z)))
    V.append((0.0, 0.0, -half - radius))
    V = np.array(V)
    top, bottom = 0, len(V) - 1

    def ring(i, j):
        return 1 + i * n + (j % n)

    F = []
    for j in range(n):
        F.append((top, ring(0, j), ring(0, j + 1)))
    for i in range(rings - 1):
        for j in range(n):
            if i % 2 == 0:
                F.append((ring(i, j), ring(i + 1, j), ring(i, j + 1)))
                F.append((ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1)))
            else:
                F.append((ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)))
                F.append((ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)))
    for j in range(n):
        F.append((bottom, ring(rings - 1, j + 1), ring(rings - 1, j)))
    F = np.array(F, dtype=np.int64)

    def axis_offset(c):
        a = c.copy()
        a[:, 2] -= np.clip(c[:, 2], -half, half)
        return a

    F = _orient_outward(V, F, axis_offset)
    return Mesh(V, F, name=f"capsule{n}")


def capsule_project(points, radius=CAPSULE_RADIUS, length=CAPSULE_LENGTH):
    """Closest points on the analytic capsule surface."""
    p = np.asarray(points, dtype=np.float64)
    half = 0.5 * length
    axis = np.zeros_like(p)
    axis[:, 2] = np.clip(p[:, 2], -half, half)
    d = p - axis
    nrm = np.linalg.norm(d, axis=1, keepdims=True)
    return axis + radius * d / np.where(nrm > 0, nrm, 1.0)


def capsule_normals(points, length=CAPSULE_LENGTH):
    p = np.asarray(points, dtype=np.float64)
    half = 0.5 * length
    d = p.copy()
    d[:, 2] -= np.clip(p[:, 2], -half, half)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def make_template(kind="capsule", resolution=None):
    """Template mesh by kind: ``sphere`` (subdivisions), ``capsule`` (segments), ``plane`` (cells)."""
    if kind == "sphere":
        return icosphere(3 if resolution is None else int(resolution))
    if kind == "capsule":
        return capsule(64 if resolution is None else int(resolution))
    if kind == "plane":
        return plane(10 if resolution is None else int(resolution))
    raise ValueError(f"unsupported template kind {kind!r} (expected sphere, capsule, or plane)")


def _orient_outward(V, F, outward):
    c = V[F]
    nrm = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    flip = np.einsum("ij,ij->i", nrm, outward(c.mean(axis=1))) < 0
    F = F.copy()
    F[flip] = F[flip][:, [0, 2, 1]]
    return F
