# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; operation order mirrors ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, atan2, cos, sin, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double EPS_VERTEX = 1e-9
cdef double EPS_RATE = 1e-12

TRACE_OK = 0
TRACE_BOUNDARY = 1
TRACE_CAP = 2


cdef inline void _closest_on_triangle(double px, double py, double pz,
                                      double ax, double ay, double az,
                                      double bx, double by, double bz,
                                      double cx, double cy, double cz,
                                      double* out) noexcept nogil:
    cdef double abx = bx - ax, aby = by - ay, abz = bz - az
    cdef double acx = cx - ax, acy = cy - ay, acz = cz - az
    cdef double apx = px - ax, apy = py - ay, apz = pz - az
    cdef double d1 = abx * apx + aby * apy + abz * apz
    cdef double d2 = acx * apx + acy * apy + acz * apz
    cdef double bpx, bpy, bpz, d3, d4, vc, v, cpx, cpy, cpz, d5, d6, vb, w, va, denom
    if d1 <= 0.0 and d2 <= 0.0:
        out[0] = 1.0; out[1] = 0.0; out[2] = 0.0
        return
    bpx = px - bx
    bpy = py - by
    bpz = pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        out[0] = 0.0; out[1] = 1.0; out[2] = 0.0
        return
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        out[0] = 1.0 - v; out[1] = v; out[2] = 0.0
        return
    cpx = px - cx
    cpy = py - cy
    cpz = pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        out[0] = 0.0; out[1] = 0.0; out[2] = 1.0
        return
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        out[0] = 1.0 - w; out[1] = 0.0; out[2] = w
        return
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out[0] = 0.0; out[1] = 1.0 - w; out[2] = w
        return
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    out[0] = 1.0 - v - w; out[1] = v; out[2] = w


cdef inline double _box_dist2(const double[:, ::1] lo, const double[:, ::1] hi, Py_ssize_t node,
                              double px, double py, double pz) noexcept nogil:
    cdef double dx, dy, dz
    if px < lo[node, 0]:
        dx = lo[node, 0] - px
    elif px > hi[node, 0]:
        dx = px - hi[node, 0]
    else:
        dx = 0.0
    if py < lo[node, 1]:
        dy = lo[node, 1] - py
    elif py > hi[node, 1]:
        dy = py - hi[node, 1]
    else:
        dy = 0.0
    if pz < lo[node, 2]:
        dz = lo[node, 2] - pz
    elif pz > hi[node, 2]:
        dz = pz - hi[node, 2]
    else:
        dz = 0.0
    return dx * dx + dy * dy + dz * dz


def closest_points(const double[:, ::1] node_lo, const double[:, ::1] node_hi,
                   const cnp.int64_t[:, ::1] node_child, const cnp.int64_t[::1] node_start,
                   const cnp.int64_t[::1] node_count, const cnp.int64_t[::1] tri_order,
                   const double[:, :, ::1] tri_pts, const double[:, ::1] queries):
    """Closest surface point for each query via BVH traversal."""
    cdef Py_ssize_t nq = queries.shape[0]
    cdef Py_ssize_t nn = node_lo.shape[0]
    out_tri_a = np.empty(nq, dtype=np.int64)
    out_bary_a = np.empty((nq, 3), dtype=np.float64)
    out_d2_a = np.empty(nq, dtype=np.float64)
    cdef cnp.int64_t[::1] out_tri = out_tri_a
    cdef double[:, ::1] out_bary = out_bary_a
    cdef double[::1] out_d2 = out_d2_a
    cdef Py_ssize_t* stack = <Py_ssize_t*> malloc((nn + 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t sp, node, left, right, j, t, qi
    cdef double px, py, pz, best, b0, b1, b2, d2, cl, cr, qx, qy, qz, ex, ey, ez
    cdef double bar[3]
    cdef cnp.int64_t best_tri
    if stack == NULL:
        raise MemoryError()
    try:
        with nogil:
            for qi in range(nq):
                px = queries[qi, 0]
                py = queries[qi, 1]
                pz = queries[qi, 2]
                best = INFINITY
                best_tri = -1
                b0 = 0.0
                b1 = 0.0
                b2 = 0.0
                sp = 0
                stack[0] = 0
                sp = 1
                while sp > 0:
                    sp -= 1
                    node = stack[sp]
                    if _box_dist2(node_lo, node_hi, node, px, py, pz) > best:
                        continue
                    left = node_child[node, 0]
                    right = node_child[node, 1]
                    if left < 0:
                        for j in range(node_start[node], node_start[node] + node_count[node]):
                            t = tri_order[j]
                            _closest_on_triangle(px, py, pz,
                                                 tri_pts[t, 0, 0], tri_pts[t, 0, 1], tri_pts[t, 0, 2],
                                                 tri_pts[t, 1, 0], tri_pts[t, 1, 1], tri_pts[t, 1, 2],
                                                 tri_pts[t, 2, 0], tri_pts[t, 2, 1], tri_pts[t, 2, 2],
                                                 bar)
                            qx = tri_pts[t, 0, 0] + (tri_pts[t, 1, 0] - tri_pts[t, 0, 0]) * bar[1] + (tri_pts[t, 2, 0] - tri_pts[t, 0, 0]) * bar[2]
                            qy = tri_pts[t, 0, 1] + (tri_pts[t, 1, 1] - tri_pts[t, 0, 1]) * bar[1] + (tri_pts[t, 2, 1] - tri_pts[t, 0, 1]) * bar[2]
                            qz = tri_pts[t, 0, 2] + (tri_pts[t, 1, 2] - tri_pts[t, 0, 2]) * bar[1] + (tri_pts[t, 2, 2] - tri_pts[t, 0, 2]) * bar[2]
                            ex = px - qx
                            ey = py - qy
                            ez = pz - qz
                            d2 = ex * ex + ey * ey + ez * ez
                            if d2 < best or (d2 == best and t < best_tri):
                                best = d2
                                best_tri = t
                                b0 = bar[0]
                                b1 = bar[1]
                                b2 = bar[2]
                        continue
                    cl = _box_dist2(node_lo, node_hi, left, px, py, pz)
                    cr = _box_dist2(node_lo, node_hi, right, px, py, pz)
                    if cl <= cr:
                        stack[sp] = right
                        stack[sp + 1] = left
                    else:
                        stack[sp] = left
                        stack[sp + 1] = right
                    sp += 2
                out_tri[qi] = best_tri
                out_bary[qi, 0] = b0
                out_bary[qi, 1] = b1
                out_bary[qi, 2] = b2
                out_d2[qi] = best
    finally:
        free(stack)
    return out_tri_a, out_bary_a, out_d2_a


cdef struct TraceMesh:
    const double* V
    const cnp.int64_t* F
    const cnp.int64_t* adj
    const double* fn
    const double* gb
    const double* ca
    const double* vang
    const cnp.uint8_t* vbnd


cdef inline int _local(const TraceMesh* m, Py_ssize_t f, cnp.int64_t v) noexcept nogil:
    if m.F[3 * f] == v:
        return 0
    if m.F[3 * f + 1] == v:
        return 1
    return 2


cdef inline void _wedge_frame(const TraceMesh* m, Py_ssize_t f, int k, double* fr) noexcept nogil:
    cdef cnp.int64_t ip = m.F[3 * f + k]
    cdef cnp.int64_t iq = m.F[3 * f + (k + 1) % 3]
    cdef double ex = m.V[3 * iq] - m.V[3 * ip]
    cdef double ey = m.V[3 * iq + 1] - m.V[3 * ip + 1]
    cdef double ez = m.V[3 * iq + 2] - m.V[3 * ip + 2]
    cdef double ln = sqrt(ex * ex + ey * ey + ez * ez)
    ex /= ln
    ey /= ln
    ez /= ln
    cdef const double* n = m.fn + 3 * f
    fr[0] = ex
    fr[1] = ey
    fr[2] = ez
    fr[3] = n[1] * ez - n[2] * ey
    fr[4] = n[2] * ex - n[0] * ez
    fr[5] = n[0] * ey - n[1] * ex


cdef inline bint _wedge_walk(const TraceMesh* m, Py_ssize_t* f, int* k, double* phi) noexcept nogil:
    cdef cnp.int64_t v = m.F[3 * f[0] + k[0]]
    cdef cnp.int64_t g
    cdef double theta
    cdef int it
    for it in range(256):
        theta = m.ca[3 * f[0] + k[0]]
        if phi[0] < 0.0:
            g = m.adj[3 * f[0] + (k[0] + 2) % 3]
            if g < 0:
                return False
            k[0] = _local(m, g, v)
            phi[0] += m.ca[3 * g + k[0]]
            f[0] = g
            continue
        if phi[0] > theta:
            g = m.adj[3 * f[0] + (k[0] + 1) % 3]
            if g < 0:
                return False
            phi[0] -= theta
            k[0] = _local(m, g, v)
            f[0] = g
            continue
        return True
    return False


cdef int _trace_one(const TraceMesh* m, Py_ssize_t* fp, double* lam, double dx, double dy,
                    double dz, double length, long max_cross, long* ncross) noexcept nogil:
    cdef Py_ssize_t f = fp[0]
    cdef Py_ssize_t g
    cdef const double* n = m.fn + 3 * f
    cdef const double* nf
    cdef const double* ng
    cdef const double* gj
    cdef double dn = dx * n[0] + dy * n[1] + dz * n[2]
    cdef double dl, remaining, phi, psi, c, s, smin, sj, rj, gn, tot, la, lb
    cdef double ex, ey, ez, ufx, ufy, ufz, ugx, ugy, ugz, de, du
    cdef double fr[6]
    cdef double r[3]
    cdef int j, kv, kmin, j1, j2
    cdef long crossings = 0
    cdef cnp.int64_t v, va, vb
    ncross[0] = 0
    dx -= dn * n[0]
    dy -= dn * n[1]
    dz -= dn * n[2]
    dl = sqrt(dx * dx + dy * dy + dz * dz)
    if length <= 0.0 or dl == 0.0:
        return 0
    dx /= dl
    dy /= dl
    dz /= dl
    remaining = length

    kv = -1
    for j in range(3):
        if lam[j] >= 1.0 - EPS_VERTEX:
            kv = j
    if kv >= 0:
        _wedge_frame(m, f, kv, fr)
        phi = atan2(dx * fr[3] + dy * fr[4] + dz * fr[5], dx * fr[0] + dy * fr[1] + dz * fr[2])
        if not _wedge_walk(m, &f, &kv, &phi):
            return 1
        fp[0] = f
        _wedge_frame(m, f, kv, fr)
        c = cos(phi)
        s = sin(phi)
        dx = c * fr[0] + s * fr[3]
        dy = c * fr[1] + s * fr[4]
        dz = c * fr[2] + s * fr[5]
        lam[0] = 0.0
        lam[1] = 0.0
        lam[2] = 0.0
        lam[kv] = 1.0

    while True:
        smin = INFINITY
        kmin = -1
        for j in range(3):
            gj = m.gb + 9 * f + 3 * j
            rj = gj[0] * dx + gj[1] * dy + gj[2] * dz
            r[j] = rj
            gn = sqrt(gj[0] * gj[0] + gj[1] * gj[1] + gj[2] * gj[2])
            if rj < -EPS_RATE * gn:
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
            lam[0] = lam[0] / tot
            lam[1] = lam[1] / tot
            lam[2] = lam[2] / tot
            fp[0] = f
            ncross[0] = crossings
            return 0
        for j in range(3):
            lam[j] = lam[j] + smin * r[j]
            if lam[j] < 0.0:
                lam[j] = 0.0
        lam[kmin] = 0.0
        tot = lam[0] + lam[1] + lam[2]
        lam[0] = lam[0] / tot
        lam[1] = lam[1] / tot
        lam[2] = lam[2] / tot
        remaining -= smin
        crossings += 1
        fp[0] = f
        ncross[0] = crossings
        if crossings > max_cross:
            return 2
        j1 = (kmin + 1) % 3
        j2 = (kmin + 2) % 3
        if lam[j1] <= EPS_VERTEX or lam[j2] <= EPS_VERTEX:
            kv = j2 if lam[j1] <= EPS_VERTEX else j1
            lam[0] = 0.0
            lam[1] = 0.0
            lam[2] = 0.0
            lam[kv] = 1.0
            v = m.F[3 * f + kv]
            if m.vbnd[v]:
                return 1
            _wedge_frame(m, f, kv, fr)
            psi = atan2(-(dx * fr[3] + dy * fr[4] + dz * fr[5]), -(dx * fr[0] + dy * fr[1] + dz * fr[2]))
            phi = psi + 0.5 * m.vang[v]
            if not _wedge_walk(m, &f, &kv, &phi):
                return 1
            fp[0] = f
            _wedge_frame(m, f, kv, fr)
            c = cos(phi)
            s = sin(phi)
            dx = c * fr[0] + s * fr[3]
            dy = c * fr[1] + s * fr[4]
            dz = c * fr[2] + s * fr[5]
            lam[0] = 0.0
            lam[1] = 0.0
            lam[2] = 0.0
            lam[kv] = 1.0
            continue
        g = m.adj[3 * f + kmin]
        if g < 0:
            return 1
        va = m.F[3 * f + j1]
        vb = m.F[3 * f + j2]
        ex = m.V[3 * vb] - m.V[3 * va]
        ey = m.V[3 * vb + 1] - m.V[3 * va + 1]
        ez = m.V[3 * vb + 2] - m.V[3 * va + 2]
        dl = sqrt(ex * ex + ey * ey + ez * ez)
        ex /= dl
        ey /= dl
        ez /= dl
        nf = m.fn + 3 * f
        ng = m.fn + 3 * g
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
        dl = sqrt(dx * dx + dy * dy + dz * dz)
        dx /= dl
        dy /= dl
        dz /= dl
        la = lam[j1]
        lb = lam[j2]
        lam[0] = 0.0
        lam[1] = 0.0
        lam[2] = 0.0
        lam[_local(m, g, va)] = la
        lam[_local(m, g, vb)] = lb
        f = g


def trace_paths(const double[:, ::1] verts, const cnp.int64_t[:, ::1] faces,
                const cnp.int64_t[:, ::1] face_adj, const double[:, ::1] face_normals,
                const double[:, :, ::1] grad_bary, const double[:, ::1] corner_angles,
                const double[::1] vertex_angle, const cnp.uint8_t[::1] vertex_boundary,
                const cnp.int64_t[::1] start_tri, const double[:, ::1] start_bary,
                const double[:, ::1] directions, const double[::1] lengths, long max_crossings):
    """Trace straightest geodesics; returns ``(tri, bary, status, crossings)``."""
    cdef TraceMesh m
    m.V = &verts[0, 0]
    m.F = &faces[0, 0]
    m.adj = &face_adj[0, 0]
    m.fn = &face_normals[0, 0]
    m.gb = &grad_bary[0, 0, 0]
    m.ca = &corner_angles[0, 0]
    m.vang = &vertex_angle[0]
    m.vbnd = &vertex_boundary[0]
    cdef Py_ssize_t n = start_tri.shape[0]
    out_tri_a = np.empty(n, dtype=np.int64)
    out_bary_a = np.empty((n, 3), dtype=np.float64)
    status_a = np.empty(n, dtype=np.int64)
    cross_a = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] out_tri = out_tri_a
    cdef double[:, ::1] out_bary = out_bary_a
    cdef cnp.int64_t[::1] status = status_a
    cdef cnp.int64_t[::1] cross = cross_a
    cdef Py_ssize_t i, f
    cdef double lam[3]
    cdef long nc
    cdef int code
    with nogil:
        for i in range(n):
            f = start_tri[i]
            lam[0] = start_bary[i, 0]
            lam[1] = start_bary[i, 1]
            lam[2] = start_bary[i, 2]
            code = _trace_one(&m, &f, lam, directions[i, 0], directions[i, 1], directions[i, 2],
                              lengths[i], max_crossings, &nc)
            out_tri[i] = f
            out_bary[i, 0] = lam[0]
            out_bary[i, 1] = lam[1]
            out_bary[i, 2] = lam[2]
            status[i] = code
            cross[i] = nc
    return out_tri_a, out_bary_a, status_a, cross_a


cdef inline void _heap_push(double* keys, Py_ssize_t* nodes, Py_ssize_t* size,
                            double key, Py_ssize_t node) noexcept nogil:
    cdef Py_ssize_t i = size[0]
    cdef Py_ssize_t parent
    size[0] += 1
    while i > 0:
        parent = (i - 1) >> 1
        if keys[parent] <= key:
            break
        keys[i] = keys[parent]
        nodes[i] = nodes[parent]
        i = parent
    keys[i] = key
    nodes[i] = node


cdef inline void _heap_pop(double* keys, Py_ssize_t* nodes, Py_ssize_t* size) noexcept nogil:
    cdef Py_ssize_t n = size[0] - 1
    cdef double key = keys[n]
    cdef Py_ssize_t node = nodes[n]
    cdef Py_ssize_t i = 0
    cdef Py_ssize_t c
    size[0] = n
    while True:
        c = 2 * i + 1
        if c >= n:
            break
        if c + 1 < n and keys[c + 1] < keys[c]:
            c += 1
        if keys[c] >= key:
            break
        keys[i] = keys[c]
        nodes[i] = nodes[c]
        i = c
    keys[i] = key
    nodes[i] = node


def graph_distances(const cnp.int32_t[::1] indptr, const cnp.int32_t[::1] indices,
                    const double[::1] weights, sources, targets, limit):
    """Shortest-path lengths from each source node to each target node.

    Stops a search once every target is settled.  Lengths above ``limit``
    are reported as ``inf``.
    """
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef cnp.int64_t[::1] src = np.ascontiguousarray(sources, dtype=np.int64)
    cdef cnp.int64_t[::1] tgt = np.ascontiguousarray(targets, dtype=np.int64)
    cdef Py_ssize_t ns = src.shape[0]
    cdef Py_ssize_t nt = tgt.shape[0]
    cdef double lim = INFINITY if limit is None else float(limit)
    out_a = np.full((ns, nt), np.inf)
    cdef double[:, ::1] out = out_a
    dist_a = np.full(n, np.inf)
    cdef double[::1] dist = dist_a
    done_a = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] done = done_a
    tmark_a = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] tmark = tmark_a
    touched_a = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] touched = touched_a
    cdef Py_ssize_t cap = int(indices.shape[0]) + n + 1
    cdef double* keys = <double*> malloc(cap * sizeof(double))
    cdef Py_ssize_t* hnodes = <Py_ssize_t*> malloc(cap * sizeof(Py_ssize_t))
    cdef Py_ssize_t si, ti, u, w, e, hsize, ntouched, remaining, nunique
    cdef double du, nd
    if keys == NULL or hnodes == NULL:
        free(keys)
        free(hnodes)
        raise MemoryError()
    try:
        with nogil:
            nunique = 0
            for ti in range(nt):
                if not tmark[tgt[ti]]:
                    tmark[tgt[ti]] = 1
                    nunique += 1
            for si in range(ns):
                hsize = 0
                ntouched = 0
                remaining = nunique
                u = src[si]
                dist[u] = 0.0
                touched[ntouched] = u
                ntouched += 1
                _heap_push(keys, hnodes, &hsize, 0.0, u)
                while hsize > 0 and remaining > 0:
                    du = keys[0]
                    u = hnodes[0]
                    _heap_pop(keys, hnodes, &hsize)
                    if done[u]:
                        continue
                    if du > lim:
                        break
                    done[u] = 1
                    if tmark[u]:
                        remaining -= 1
                    for e in range(indptr[u], indptr[u + 1]):
                        w = indices[e]
                        if done[w]:
                            continue
                        nd = du + weights[e]
                        if nd > lim:
                            continue
                        if nd < dist[w]:
                            if dist[w] == INFINITY:
                                touched[ntouched] = w
                                ntouched += 1
                            dist[w] = nd
                            _heap_push(keys, hnodes, &hsize, nd, w)
                for ti in range(nt):
                    w = tgt[ti]
                    if done[w]:
                        out[si, ti] = dist[w]
                for e in range(ntouched):
                    w = touched[e]
                    dist[w] = INFINITY
                    done[w] = 0
    finally:
        free(keys)
        free(hnodes)
    return out_a
