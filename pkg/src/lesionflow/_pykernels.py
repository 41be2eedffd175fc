"""Pure-Python reference versions of the hot kernels.

Every routine here has a compiled twin in ``_ckernels.pyx`` with the same
signature and the same floating-point operation order, so both backends
return identical results.  This module is used when the extension is not
built or when ``LESIONFLOW_PURE_PYTHON=1``.
"""

import math

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

TRACE_OK = 0
TRACE_BOUNDARY = 1
TRACE_CAP = 2

_EPS_VERTEX = 1e-9
_EPS_RATE = 1e-12


def _closest_on_triangle(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Barycentric coordinates of the point of triangle abc closest to p."""
    abx = bx - ax
    aby = by - ay
    abz = bz - az
    acx = cx - ax
    acy = cy - ay
    acz = cz - az
    apx = px - ax
    apy = py - ay
    apz = pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return 1.0, 0.0, 0.0
    bpx = px - bx
    bpy = py - by
    bpz = pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return 0.0, 1.0, 0.0
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return 1.0 - v, v, 0.0
    cpx = px - cx
    cpy = py - cy
    cpz = pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return 0.0, 0.0, 1.0
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return 1.0 - w, 0.0, w
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return 0.0, 1.0 - w, w
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return 1.0 - v - w, v, w


def closest_points(node_lo, node_hi, node_child, node_start, node_count,
                   tri_order, tri_pts, queries):
    """Closest surface point for each query via BVH traversal.

    Returns ``(tri, bary, dist2)``.  Ties in squared distance go to the lowest
    triangle index.
    """
    lo = node_lo.tolist()
    hi = node_hi.tolist()
    child = node_child.tolist()
    start = node_start.tolist()
    count = node_count.tolist()
    order = tri_order.tolist()
    tp = tri_pts.tolist()
    nq = queries.shape[0]
    out_tri = np.empty(nq, dtype=np.int64)
    out_bary = np.empty((nq, 3), dtype=np.float64)
    out_d2 = np.empty(nq, dtype=np.float64)
    for qi, (px, py, pz) in enumerate(queries.tolist()):
        best = math.inf
        best_tri = -1
        b0 = b1 = b2 = 0.0
        stack = [0]
        while stack:
            node = stack.pop()
            l = lo[node]
            h = hi[node]
            dx = l[0] - px if px < l[0] else (px - h[0] if px > h[0] else 0.0)
            dy = l[1] - py if py < l[1] else (py - h[1] if py > h[1] else 0.0)
            dz = l[2] - pz if pz < l[2] else (pz - h[2] if pz > h[2] else 0.0)
            if dx * dx + dy * dy + dz * dz > best:
                continue
            left, right = child[node]
            if left < 0:
                s = start[node]
                for j in range(s, s + count[node]):
                    t = order[j]
                    a, b, c = tp[t]
                    u, v, w = _closest_on_triangle(px, py, pz, a[0], a[1], a[2],
                                                   b[0], b[1], b[2], c[0], c[1], c[2])
                    qx = a[0] + (b[0] - a[0]) * v + (c[0] - a[0]) * w
                    qy = a[1] + (b[1] - a[1]) * v + (c[1] - a[1]) * w
                    qz = a[2] + (b[2] - a[2]) * v + (c[2] - a[2]) * w
                    ex = px - qx
                    ey = py - qy
                    ez = pz - qz
                    d2 = ex * ex + ey * ey + ez * ez
                    if d2 < best or (d2 == best and t < best_tri):
                        best = d2
                        best_tri = t
                        b0, b1, b2 = u, v, w
                continue
            # visit the nearer child first
            cl = _box_dist2(lo[left], hi[left], px, py, pz)
            cr = _box_dist2(lo[right], hi[right], px, py, pz)
            if cl <= cr:
                stack.append(right)
                stack.append(left)
            else:
                stack.append(left)
                stack.append(right)
        out_tri[qi] = best_tri
        out_bary[qi, 0] = b0
        out_bary[qi, 1] = b1
        out_bary[qi, 2] = b2
        out_d2[qi] = best
    return out_tri, out_bary, out_d2


def _box_dist2(l, h, px, py, pz):
    dx = l[0] - px if px < l[0] else (px - h[0] if px > h[0] else 0.0)
    dy = l[1] - py if py < l[1] else (py - h[1] if py > h[1] else 0.0)
    dz = l[2] - pz if pz < l[2] else (pz - h[2] if pz > h[2] else 0.0)
    return dx * dx + dy * dy + dz * dz


class _TraceMesh:
    __slots__ = ("V", "F", "adj", "fn", "gb", "ca", "vang", "vbnd")

    def __init__(self, verts, faces, face_adj, face_normals, grad_bary,
                 corner_angles, vertex_angle, vertex_boundary):
        self.V = verts.tolist()
        self.F = faces.tolist()
        self.adj = face_adj.tolist()
        self.fn = face_normals.tolist()
        self.gb = grad_bary.tolist()
        self.ca = corner_angles.tolist()
        self.vang = vertex_angle.tolist()
        self.vbnd = vertex_boundary.tolist()


def _local(F, f, v):
    tri = F[f]
    if tri[0] == v:
        return 0
    if tri[1] == v:
        return 1
    return 2


def _wedge_frame(m, f, k):
    """Unit edge direction (corner k -> k+1) and in-plane perpendicular."""
    F = m.F
    V = m.V
    p = V[F[f][k]]
    q = V[F[f][(k + 1) % 3]]
    ex = q[0] - p[0]
    ey = q[1] - p[1]
    ez = q[2] - p[2]
    ln = math.sqrt(ex * ex + ey * ey + ez * ez)
    ex /= ln
    ey /= ln
    ez /= ln
    n = m.fn[f]
    px = n[1] * ez - n[2] * ey
    py = n[2] * ex - n[0] * ez
    pz = n[0] * ey - n[1] * ex
    return ex, ey, ez, px, py, pz


def _wedge_walk(m, f, k, phi):
    """Walk around the vertex at corner ``k`` of ``f`` until ``phi`` fits a wedge.

    Returns ``(face, corner, phi)`` or ``None`` when the walk leaves the mesh.
    """
    F = m.F
    v = F[f][k]
    for _ in range(256):
        theta = m.ca[f][k]
        if phi < 0.0:
            g = m.adj[f][(k + 2) % 3]
            if g < 0:
                return None
            k = _local(F, g, v)
            phi += m.ca[g][k]
            f = g
            continue
        if phi > theta:
            g = m.adj[f][(k + 1) % 3]
            if g < 0:
                return None
            phi -= theta
            k = _local(F, g, v)
            f = g
            continue
        return f, k, phi
    return None


def _trace_one(m, f, l0, l1, l2, dx, dy, dz, length, max_cross):
    lam = [l0, l1, l2]
    n = m.fn[f]
    dn = dx * n[0] + dy * n[1] + dz * n[2]
    dx -= dn * n[0]
    dy -= dn * n[1]
    dz -= dn * n[2]
    dl = math.sqrt(dx * dx + dy * dy + dz * dz)
    if length <= 0.0 or dl == 0.0:
        return f, lam, TRACE_OK, 0
    dx /= dl
    dy /= dl
    dz /= dl
    remaining = length
    crossings = 0

    kv = -1
    for j in range(3):
        if lam[j] >= 1.0 - _EPS_VERTEX:
            kv = j
    if kv >= 0:
        ex, ey, ez, qx, qy, qz = _wedge_frame(m, f, kv)
        phi = math.atan2(dx * qx + dy * qy + dz * qz, dx * ex + dy * ey + dz * ez)
        res = _wedge_walk(m, f, kv, phi)
        if res is None:
            return f, lam, TRACE_BOUNDARY, 0
        f, kv, phi = res
        ex, ey, ez, qx, qy, qz = _wedge_frame(m, f, kv)
        c = math.cos(phi)
        s = math.sin(phi)
        dx = c * ex + s * qx
        dy = c * ey + s * qy
        dz = c * ez + s * qz
        lam = [0.0, 0.0, 0.0]
        lam[kv] = 1.0

    while True:
        g3 = m.gb[f]
        r = [0.0, 0.0, 0.0]
        smin = math.inf
        kmin = -1
        for j in range(3):
            gj = g3[j]
            rj = gj[0] * dx + gj[1] * dy + gj[2] * dz
            r[j] = rj
            gn = math.sqrt(gj[0] * gj[0] + gj[1] * gj[1] + gj[2] * gj[2])
            if rj < -_EPS_RATE * gn:
                sj = -lam[j] / rj
                if sj < 0.0:
                    sj = 0.0
                if sj < smin:
                    smin = sj
                    kmin = j
        if kmin < 0 or smin >= remaining:
            for j in range(3):
                lam[j] = lam[j] + remaining * r[j]
                if lam[j] < 0.0:
                    lam[j] = 0.0
            tot = lam[0] + lam[1] + lam[2]
            lam = [lam[0] / tot, lam[1] / tot, lam[2] / tot]
            return f, lam, TRACE_OK, crossings
        for j in range(3):
            lam[j] = lam[j] + smin * r[j]
            if lam[j] < 0.0:
                lam[j] = 0.0
        lam[kmin] = 0.0
        tot = lam[0] + lam[1] + lam[2]
        lam = [lam[0] / tot, lam[1] / tot, lam[2] / tot]
        remaining -= smin
        crossings += 1
        if crossings > max_cross:
            return f, lam, TRACE_CAP, crossings
        j1 = (kmin + 1) % 3
        j2 = (kmin + 2) % 3
        if lam[j1] <= _EPS_VERTEX or lam[j2] <= _EPS_VERTEX:
            kv = j2 if lam[j1] <= _EPS_VERTEX else j1
            lam = [0.0, 0.0, 0.0]
            lam[kv] = 1.0
            v = m.F[f][kv]
            if m.vbnd[v]:
                return f, lam, TRACE_BOUNDARY, crossings
            ex, ey, ez, qx, qy, qz = _wedge_frame(m, f, kv)
            psi = math.atan2(-(dx * qx + dy * qy + dz * qz), -(dx * ex + dy * ey + dz * ez))
            res = _wedge_walk(m, f, kv, psi + 0.5 * m.vang[v])
            if res is None:
                return f, lam, TRACE_BOUNDARY, crossings
            f, kv, phi = res
            ex, ey, ez, qx, qy, qz = _wedge_frame(m, f, kv)
            c = math.cos(phi)
            s = math.sin(phi)
            dx = c * ex + s * qx
            dy = c * ey + s * qy
            dz = c * ez + s * qz
            lam = [0.0, 0.0, 0.0]
            lam[kv] = 1.0
            continue
        g = m.adj[f][kmin]
        if g < 0:
            return f, lam, TRACE_BOUNDARY, crossings
        F = m.F
        va = F[f][j1]
        vb = F[f][j2]
        pa = m.V[va]
        pb = m.V[vb]
        ex = pb[0] - pa[0]
        ey = pb[1] - pa[1]
        ez = pb[2] - pa[2]
        ln = math.sqrt(ex * ex + ey * ey + ez * ez)
        ex /= ln
        ey /= ln
        ez /= ln
        nf = m.fn[f]
        ng = m.fn[g]
        ufx = nf[1] * ez - nf[2] * ey
        ufy = nf[2] * ex - nf[0] * ez
        ufz = nf[0] * ey - nf[1] * ex
        ugx = ng[1] * ez - ng[2] * ey
        ugy = ng[2] * ex - ng[0] * ez
        ugz = ng[0] * ey - ng[1] * ex
        de = dx * ex + dy * ey + dz * ez
        du = dx * ufx + dy * ufy + dz * ufz
        dx = de * ex + du * ugx
        dy = de * ey + du * ugy
        dz = de * ez + du * ugz
        dl = math.sqrt(dx * dx + dy * dy + dz * dz)
        dx /= dl
        dy /= dl
        dz /= dl
        la = lam[j1]
        lb = lam[j2]
        lam = [0.0, 0.0, 0.0]
        lam[_local(F, g, va)] = la
        lam[_local(F, g, vb)] = lb
        f = g


def trace_paths(verts, faces, face_adj, face_normals, grad_bary, corner_angles,
                vertex_angle, vertex_boundary, start_tri, start_bary, directions,
                lengths, max_crossings):
    """Trace straightest geodesics; returns ``(tri, bary, status, crossings)``."""
    m = _TraceMesh(verts, faces, face_adj, face_normals, grad_bary,
                   corner_angles, vertex_angle, vertex_boundary)
    n = start_tri.shape[0]
    out_tri = np.empty(n, dtype=np.int64)
    out_bary = np.empty((n, 3), dtype=np.float64)
    status = np.empty(n, dtype=np.int64)
    cross = np.empty(n, dtype=np.int64)
    st = start_tri.tolist()
    sb = start_bary.tolist()
    dirs = directions.tolist()
    lens = lengths.tolist()
    for i in range(n):
        b = sb[i]
        d = dirs[i]
        f, lam, code, nc = _trace_one(m, st[i], b[0], b[1], b[2], d[0], d[1], d[2],
                                      lens[i], max_crossings)
        out_tri[i] = f
        out_bary[i, 0] = lam[0]
        out_bary[i, 1] = lam[1]
        out_bary[i, 2] = lam[2]
        status[i] = code
        cross[i] = nc
    return out_tri, out_bary, status, cross


def graph_distances(indptr, indices, weights, sources, targets, limit):
    """Shortest-path lengths from each source node to each target node.

    Lengths above ``limit`` are reported as ``inf``.
    """
    n = indptr.shape[0] - 1
    g = csr_matrix((weights, indices, indptr), shape=(n, n))
    lim = np.inf if limit is None else float(limit)
    if len(sources) == 0:
        return np.empty((0, len(targets)))
    d = dijkstra(g, directed=True, indices=np.asarray(sources, dtype=np.int64), limit=lim)
    return np.ascontiguousarray(d[:, np.asarray(targets, dtype=np.int64)])
