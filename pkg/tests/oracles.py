"""Independent reference implementations used only by the tests.

Nothing here imports package internals beyond plain mesh attributes
(vertices, triangles, vertex bases); each routine re-derives its result by
a different, slower method.
"""

import itertools
import math

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve


# -- closest point ---------------------------------------------------------------

def _closest_on_segment(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return a + t * ab


def closest_point_exhaustive(vertices, triangles, p):
    """Nearest point over all triangles: in-plane projection or nearest edge point.

    Returns ``(distance, point, lowest triangle index attaining it)``.
    """
    best = (np.inf, None, -1)
    for f, (i, j, k) in enumerate(triangles):
        a, b, c = vertices[i], vertices[j], vertices[k]
        n = np.cross(b - a, c - a)
        n = n / np.linalg.norm(n)
        q = p - np.dot(p - a, n) * n
        inside = all(np.dot(np.cross(y - x, q - x), n) >= 0 for x, y in ((a, b), (b, c), (c, a)))
        if inside:
            cand = q
        else:
            cands = [_closest_on_segment(p, x, y) for x, y in ((a, b), (b, c), (c, a))]
            cand = min(cands, key=lambda z: np.linalg.norm(p - z))
        d = np.linalg.norm(p - cand)
        if d < best[0] - 1e-12:
            best = (d, cand, f)
    return best


# -- assignment ------------------------------------------------------------------

def best_partial_matching(cost, beta):
    """Minimum over all partial injections of matched cost plus beta per unmatched item."""
    n0, n1 = cost.shape
    best = np.inf
    for k in range(min(n0, n1) + 1):
        for rows in itertools.combinations(range(n0), k):
            for cols in itertools.permutations(range(n1), k):
                val = sum(cost[r, c] for r, c in zip(rows, cols)) + beta * (n0 - k + n1 - k)
                best = min(best, val)
    return best


# -- flow energy -----------------------------------------------------------------

def _rodrigues(v, n_from, n_to):
    axis = np.cross(n_from, n_to)
    s = np.linalg.norm(axis)
    c = float(np.dot(n_from, n_to))
    if s < 1e-15:
        return v.copy()
    k = axis / s
    theta = math.atan2(s, c)
    return (v * math.cos(theta) + np.cross(k, v) * math.sin(theta)
            + k * np.dot(k, v) * (1 - math.cos(theta)))


def _normal(a, b, c):
    n = np.cross(b - a, c - a)
    return n / np.linalg.norm(n)


def _p1_gradient(pts, vals, n, area):
    g = np.zeros(3)
    for k in range(3):
        e = pts[(k + 2) % 3] - pts[(k + 1) % 3]
        g += vals[k] * np.cross(n, e) / (2 * area)
    return g


def flow_energy_direct(mesh, pairs, x, smoothness, size):
    """Flow energy summed face by face and edge by edge.

    ``x`` holds 2 components per vertex in ``mesh.vertex_basis``.
    """
    V, F = mesh.vertices, mesh.triangles
    vn = mesh.vertex_normals
    x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
    v3 = np.array([mesh.vertex_basis[i] @ x[i] for i in range(len(V))])
    E = 0.0
    mass = np.zeros(len(V))
    cot_sum = {}
    for tri in F:
        pts = V[tri]
        n = _normal(*pts)
        area = 0.5 * np.linalg.norm(np.cross(pts[1] - pts[0], pts[2] - pts[0]))
        mass[tri] += area / 3.0
        vf = sum(_rodrigues(v3[i], vn[i], n) for i in tri) / 3.0
        for f0, f1, w in pairs:
            delta = np.mean(f0[tri] - f1[tri])
            for f in (f0, f1):
                g = _p1_gradient(pts, f[tri], n, area)
                E += 0.5 * w * area * (np.dot(g, vf) - delta) ** 2
        for k in range(3):
            i, j = tri[(k + 1) % 3], tri[(k + 2) % 3]
            u, v = pts[(k + 1) % 3] - pts[k], pts[(k + 2) % 3] - pts[k]
            ang = math.acos(np.clip(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)), -1, 1))
            key = (min(i, j), max(i, j))
            cot_sum[key] = cot_sum.get(key, 0.0) + 0.5 / math.tan(ang)
    for (i, j), w in cot_sum.items():
        w = max(w, 0.0)
        d = v3[i] - _rodrigues(v3[j], vn[j], vn[i])
        E += smoothness * w * np.dot(d, d)
    E += size * float(np.sum(mass * np.einsum("ij,ij->i", v3, v3)))
    return E


# -- 2D optical flow ---------------------------------------------------------------

def horn_schunck_grid(f0, f1, spacing, smoothness, iters=1):
    """Symmetric Horn-Schunck flow on a regular grid by finite differences.

    Minimizes ``sum (g . v - (f0 - f1))^2 + smoothness |grad v|^2`` with
    ``g`` the averaged central-difference gradient, iterating the
    linearization with bilinear warping.  Returns ``(ny, nx, 2)`` flow.
    """
    from scipy.ndimage import map_coordinates

    ny, nx = f0.shape
    yy, xx = np.mgrid[0:ny, 0:nx].astype(np.float64)
    v = np.zeros((ny, nx, 2))
    N = nx * ny
    idx = np.arange(N).reshape(ny, nx)
    rows, cols, vals = [], [], []
    for a, b in ((idx[:, :-1], idx[:, 1:]), (idx[:-1, :], idx[1:, :])):
        a, b = a.ravel(), b.ravel()
        rows += [a, b, a, b]
        cols += [a, b, b, a]
        vals += [np.ones_like(a), np.ones_like(a), -np.ones_like(a), -np.ones_like(a)]
    L = sparse.csr_matrix((np.concatenate(vals).astype(float), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(N, N))
    Lb = sparse.block_diag([L, L]).tocsr()
    for _ in range(iters):
        sx, sy = v[..., 0] / spacing, v[..., 1] / spacing
        w0 = map_coordinates(f0, [yy - sy / 2, xx - sx / 2], order=1, mode="nearest")
        w1 = map_coordinates(f1, [yy + sy / 2, xx + sx / 2], order=1, mode="nearest")
        g = 0.5 * (np.stack(np.gradient(w0, spacing)[::-1], -1) + np.stack(np.gradient(w1, spacing)[::-1], -1))
        gx, gy = g[..., 0].ravel(), g[..., 1].ravel()
        r = (w0 - w1).ravel()
        H = sparse.bmat([[sparse.diags(gx * gx), sparse.diags(gx * gy)],
                         [sparse.diags(gx * gy), sparse.diags(gy * gy)]])
        A = (H + smoothness * Lb + 1e-9 * sparse.eye(2 * N)).tocsc()
        cur = np.concatenate([v[..., 0].ravel(), v[..., 1].ravel()])
        rhs = np.concatenate([gx * r, gy * r]) - smoothness * (Lb @ cur)
        dv = spsolve(A, rhs)
        v = v + np.stack([dv[:N].reshape(ny, nx), dv[N:].reshape(ny, nx)], axis=-1)
    return v


# -- metrics -----------------------------------------------------------------------

def prf1_direct(pred_pairs, gt_pairs):
    pred, gt = set(pred_pairs), set(gt_pairs)
    hit = len(pred & gt)
    p = hit / len(pred) if pred else 0.0
    r = hit / len(gt) if gt else 0.0
    f = 0.0 if p * r == 0 else 2 * p * r / (p + r)
    return p, r, f


def great_circle(a, b, radius=1.0):
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    return radius * math.atan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b))
