"""Approximate geodesic distances and straightest-geodesic tracing.

Distances use Dijkstra on a Steiner graph: mesh vertices plus ``k`` evenly
spaced points on every edge, with every pair of nodes on a common triangle
joined by a straight in-triangle segment.  Nodes of two triangles sharing an
edge are also joined when the straight segment in the unfolded pair crosses
that edge.  Query points are linked to the nodes of their triangle.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import kernels
from .mesh import SurfacePoint, embed, rotate_into_plane

logger = logging.getLogger(__name__)

DEFAULT_STEINER = 1
MAX_CROSSINGS = 100_000


class GeodesicError(RuntimeError):
    """Tracing failed (typically a degenerate mesh)."""


@dataclass
class SteinerGraph:
    positions: np.ndarray  # (N, 3)
    face_nodes: np.ndarray  # (m, 3 + 3k)
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray

    @property
    def n_nodes(self):
        return self.positions.shape[0]


def steiner_graph(mesh, steiner=DEFAULT_STEINER):
    """Cached Steiner graph of ``mesh`` with ``steiner`` points per edge."""
    key = ("steiner", int(steiner))
    if key not in mesh._cache:
        mesh._cache[key] = _build_steiner(mesh, int(steiner))
    return mesh._cache[key]


def _build_steiner(mesh, k):
    if k < 0:
        raise ValueError("steiner level must be >= 0")
    V, F = mesh.vertices, mesh.triangles
    n = mesh.n_vertices
    edges = mesh.edges
    ekeys = edges[:, 0] * n + edges[:, 1]
    pos = [V]
    if k:
        t = np.arange(1, k + 1) / (k + 1)
        pts = V[edges[:, 0], None, :] + t[None, :, None] * (V[edges[:, 1]] - V[edges[:, 0]])[:, None, :]
        pos.append(pts.reshape(-1, 3))
    positions = np.concatenate(pos)
    cols = [F]
    for c in range(3):
        a, b = F[:, c], F[:, (c + 1) % 3]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        eid = np.searchsorted(ekeys, lo * n + hi)
        if k:
            cols.append(n + eid[:, None] * k + np.arange(k)[None, :])
    face_nodes = np.ascontiguousarray(np.concatenate(cols, axis=1))
    q = face_nodes.shape[1]
    iu, ju = np.triu_indices(q, 1)
    a = face_nodes[:, iu].reshape(-1)
    b = face_nodes[:, ju].reshape(-1)
    w = np.linalg.norm(positions[b] - positions[a], axis=1)
    da, db, dw = _hinge_edges(mesh, positions, face_nodes)
    N = positions.shape[0]
    a, b, w = np.concatenate([a, da]), np.concatenate([b, db]), np.concatenate([w, dw])
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    # keep the shortest weight per undirected node pair
    key = lo * N + hi
    order = np.lexsort((w, key))
    key, w = key[order], w[order]
    first = np.r_[True, key[1:] != key[:-1]]
    key, w = key[first], w[first]
    lo, hi = key // N, key % N
    g = sparse.csr_matrix((np.concatenate([w, w]), (np.concatenate([lo, hi]), np.concatenate([hi, lo]))),
                          shape=(N, N))
    g.sort_indices()
    return SteinerGraph(positions, face_nodes, g.indptr.astype(np.int32), g.indices.astype(np.int32),
                        g.data.astype(np.float64))


def _hinge_frames(mesh, f, c):
    F, V = mesh.triangles, mesh.vertices
    g = mesh.face_adjacency[f, c]
    pa = V[F[f, (c + 1) % 3]]
    e = V[F[f, (c + 2) % 3]] - pa
    L = np.linalg.norm(e, axis=1)
    e = e / L[:, None]
    return g, pa, e, L, np.cross(mesh.face_normals[f], e), np.cross(mesh.face_normals[g], e)


def _unfold(pa, e, L, uf, ug, Pf, Pg):
    """Straight-line links from points of face f to points of the adjacent face g.

    ``Pf`` is (E, a, 3) and ``Pg`` is (E, b, 3).  Returns ``(valid, dist)`` of
    shape (E, a, b); a link is valid when the unfolded segment crosses the
    shared edge strictly from one side to the other.
    """
    df = Pf - pa[:, None, :]
    dg = Pg - pa[:, None, :]
    xf = np.einsum("eqk,ek->eq", df, e)[:, :, None]
    yf = np.abs(np.einsum("eqk,ek->eq", df, uf))[:, :, None]
    xg = np.einsum("eqk,ek->eq", dg, e)[:, None, :]
    yg = -np.abs(np.einsum("eqk,ek->eq", dg, ug))[:, None, :]
    tol = 1e-12 * L[:, None, None]
    valid = (yf > tol) & (yg < -tol)
    t = yf / np.where(valid, yf - yg, 1.0)
    x = xf + t * (xg - xf)
    valid &= (x >= 0.0) & (x <= L[:, None, None])
    return valid, np.hypot(xg - xf, yg - yf)


def _hinge_edges(mesh, positions, face_nodes):
    """Links between nodes of two faces sharing an edge.

    The two faces are unfolded into a common plane; a link is kept only when
    the straight segment crosses the shared edge, so its length is that of a
    genuine surface path and the graph never underestimates.
    """
    f, c = np.nonzero(mesh.face_adjacency >= 0)
    keep = f < mesh.face_adjacency[f, c]
    f, c = f[keep], c[keep]
    if len(f) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    g, pa, e, L, uf, ug = _hinge_frames(mesh, f, c)
    nf, ng = face_nodes[f], face_nodes[g]
    valid, dist = _unfold(pa, e, L, uf, ug, positions[nf], positions[ng])
    ei, qi, qj = np.nonzero(valid)
    return nf[ei, qi], ng[ei, qj], dist[ei, qi, qj]


def _query_links(mesh, graph, tri, pos):
    """Links from query points to graph nodes: ``(query, node, length)``.

    Each query reaches every node of its own triangle directly and the nodes
    of the three neighbouring triangles through the unfolded shared edge.
    """
    n = len(tri)
    fn = graph.face_nodes
    q = fn.shape[1]
    qi = [np.repeat(np.arange(n), q)]
    nodes = [fn[tri].reshape(-1)]
    w = [np.linalg.norm(graph.positions[fn[tri]] - pos[:, None, :], axis=2).reshape(-1)]
    for c in range(3):
        has = np.nonzero(mesh.face_adjacency[tri, c] >= 0)[0]
        if len(has) == 0:
            continue
        g, pa, e, L, uf, ug = _hinge_frames(mesh, tri[has], np.full(len(has), c))
        valid, dist = _unfold(pa, e, L, uf, ug, pos[has][:, None, :], graph.positions[fn[g]])
        ei, _, qj = np.nonzero(valid)
        qi.append(has[ei])
        nodes.append(fn[g][ei, qj])
        w.append(dist[ei, 0, qj])
    return np.concatenate(qi), np.concatenate(nodes), np.concatenate(w)


def _direct_links(mesh, s_tri, s_pos, t_tri, t_pos, si, ti):
    """Direct source-to-target links for candidate pairs ``(si, ti)``.

    Pairs on one triangle get their chord; pairs on adjacent triangles get the
    unfolded segment when it crosses the shared edge.
    """
    fs, ft = s_tri[si], t_tri[ti]
    same = fs == ft
    out_s, out_t, out_w = [si[same]], [ti[same]], [np.linalg.norm(s_pos[si[same]] - t_pos[ti[same]], axis=1)]
    for c in range(3):
        m = np.nonzero(mesh.face_adjacency[fs, c] == ft)[0]
        if len(m) == 0:
            continue
        g, pa, e, L, uf, ug = _hinge_frames(mesh, fs[m], np.full(len(m), c))
        valid, dist = _unfold(pa, e, L, uf, ug, s_pos[si[m]][:, None, :], t_pos[ti[m]][:, None, :])
        ok = valid[:, 0, 0]
        out_s.append(si[m][ok])
        out_t.append(ti[m][ok])
        out_w.append(dist[ok, 0, 0])
    return np.concatenate(out_s), np.concatenate(out_t), np.concatenate(out_w)


def _assemble(graph, extra_rows, extra_cols, extra_w, total):
    N = graph.n_nodes
    base = sparse.csr_matrix((graph.weights, graph.indices, graph.indptr), shape=(N, N)).tocoo()
    r = np.concatenate([base.row.astype(np.int64)] + extra_rows)
    c = np.concatenate([base.col.astype(np.int64)] + extra_cols)
    w = np.concatenate([base.data] + extra_w)
    # parallel links collapse to the shortest one
    key = r * total + c
    order = np.lexsort((w, key))
    key = key[order]
    first = np.r_[True, key[1:] != key[:-1]]
    order = order[first]
    g = sparse.csr_matrix((w[order], (r[order], c[order])), shape=(total, total))
    g.sort_indices()
    return g.indptr.astype(np.int32), g.indices.astype(np.int32), g.data.astype(np.float64)


def _augmented(graph, mesh, src_tri, src_pos, tgt_tri, tgt_pos):
    """CSR arrays with out-only source nodes and in-only target nodes appended."""
    N = graph.n_nodes
    S, T = len(src_tri), len(tgt_tri)
    qs, ns, ws = _query_links(mesh, graph, src_tri, src_pos)
    qt, nt, wt = _query_links(mesh, graph, tgt_tri, tgt_pos)
    si, ti = np.nonzero(_near(mesh, src_tri[:, None], tgt_tri[None, :]))
    ds, dt, dw = _direct_links(mesh, src_tri, src_pos, tgt_tri, tgt_pos, si, ti)
    return _assemble(graph, [N + qs, nt, N + ds], [ns, N + S + qt, N + S + dt], [ws, wt, dw], N + S + T)


def _near(mesh, a, b):
    adj = mesh.face_adjacency
    return (a == b) | (adj[a, 0] == b) | (adj[a, 1] == b) | (adj[a, 2] == b)


def geodesic_matrix(mesh, src_tri, src_bary, tgt_tri, tgt_bary, limit=None,
                    steiner=DEFAULT_STEINER, backend=None):
    """Distances from every source point to every target point, shape (S, T).

    Each row is one Dijkstra run from that source.  Distances above ``limit``
    are ``inf``.
    """
    impl = backend or kernels
    src_tri = np.asarray(src_tri, dtype=np.int64).reshape(-1)
    tgt_tri = np.asarray(tgt_tri, dtype=np.int64).reshape(-1)
    S, T = len(src_tri), len(tgt_tri)
    if S == 0 or T == 0:
        return np.zeros((S, T))
    graph = steiner_graph(mesh, steiner)
    src_pos = mesh.embed_many(src_tri, src_bary)
    tgt_pos = mesh.embed_many(tgt_tri, tgt_bary)
    indptr, indices, weights = _augmented(graph, mesh, src_tri, src_pos, tgt_tri, tgt_pos)
    N = graph.n_nodes
    return impl.graph_distances(indptr, indices, weights, np.arange(N, N + S),
                                np.arange(N + S, N + S + T), limit)


def pair_distances(mesh, a_tri, a_bary, b_tri, b_bary, steiner=DEFAULT_STEINER, backend=None):
    """Geodesic distance for each pair ``(a[i], b[i])``.

    Each pair is run from its lexicographically smaller endpoint, so the
    result equals :func:`geodesic_distance` pair by pair.
    """
    impl = backend or kernels
    a_tri = np.asarray(a_tri, dtype=np.int64).reshape(-1)
    b_tri = np.asarray(b_tri, dtype=np.int64).reshape(-1)
    a_bary = np.asarray(a_bary, dtype=np.float64).reshape(-1, 3)
    b_bary = np.asarray(b_bary, dtype=np.float64).reshape(-1, 3)
    P = len(a_tri)
    if P == 0:
        return np.zeros(0)
    swap = np.array([_key(b_tri[i], b_bary[i]) < _key(a_tri[i], a_bary[i]) for i in range(P)])
    s_tri = np.where(swap, b_tri, a_tri)
    t_tri = np.where(swap, a_tri, b_tri)
    s_bary = np.where(swap[:, None], b_bary, a_bary)
    t_bary = np.where(swap[:, None], a_bary, b_bary)
    graph = steiner_graph(mesh, steiner)
    # each source only links to its own partner, so pairs cannot shortcut via each other
    out = np.empty(P)
    src_pos = mesh.embed_many(s_tri, s_bary)
    tgt_pos = mesh.embed_many(t_tri, t_bary)
    indptr, indices, weights = _augmented_pairs(graph, mesh, s_tri, src_pos, t_tri, tgt_pos)
    N = graph.n_nodes
    for i in range(P):
        out[i] = impl.graph_distances(indptr, indices, weights, np.array([N + i]),
                                      np.array([N + P + i]), None)[0, 0]
    _warn_inf(out)
    return out


def _augmented_pairs(graph, mesh, src_tri, src_pos, tgt_tri, tgt_pos):
    N = graph.n_nodes
    P = len(src_tri)
    qs, ns, ws = _query_links(mesh, graph, src_tri, src_pos)
    qt, nt, wt = _query_links(mesh, graph, tgt_tri, tgt_pos)
    idx = np.arange(P)
    ds, dt, dw = _direct_links(mesh, src_tri, src_pos, tgt_tri, tgt_pos, idx, idx)
    return _assemble(graph, [N + qs, nt, N + ds], [ns, N + P + qt, N + P + dt], [ws, wt, dw], N + 2 * P)


def _key(tri, bary):
    return (int(tri),) + tuple(float(x) for x in bary)


def _warn_inf(d):
    if np.any(np.isinf(d)):
        logger.warning("%d geodesic queries hit disconnected components", int(np.isinf(d).sum()))


def geodesic_distance(mesh, a, b, steiner=DEFAULT_STEINER, backend=None):
    """Approximate intrinsic distance between surface points ``a`` and ``b``.

    Symmetric by construction: the search always starts from the
    lexicographically smaller endpoint.  Returns ``inf`` (with a warning)
    when the points lie on different components.
    """
    if a == b:
        return 0.0
    return float(pair_distances(mesh, [a.triangle], [a.bary], [b.triangle], [b.bary],
                                steiner=steiner, backend=backend)[0])


def trace(mesh, tri, bary, vectors, backend=None, max_crossings=MAX_CROSSINGS):
    """Move surface points along straightest geodesics.

    ``vectors`` are 3D tangent vectors in the plane of each start triangle;
    their lengths are the path lengths.  Returns ``(tri, bary, status)``
    where status 1 marks paths stopped at the mesh boundary.
    """
    impl = backend or kernels
    tri = np.ascontiguousarray(tri, dtype=np.int64).reshape(-1)
    bary = np.ascontiguousarray(bary, dtype=np.float64).reshape(-1, 3)
    vec = np.ascontiguousarray(vectors, dtype=np.float64).reshape(-1, 3)
    lengths = np.ascontiguousarray(np.linalg.norm(vec, axis=1))
    if not np.all(np.isfinite(lengths)):
        raise ValueError("non-finite tangent vector")
    out_tri, out_bary, status, _ = impl.trace_paths(
        mesh.vertices, mesh.triangles, mesh.face_adjacency, mesh.face_normals, mesh.grad_bary,
        mesh.corner_angles, mesh.vertex_angle_sum, mesh.vertex_boundary,
        tri, bary, vec, lengths, max_crossings)
    if np.any(status == kernels.TRACE_CAP):
        raise GeodesicError(f"geodesic trace exceeded {max_crossings} edge crossings "
                            f"({int((status == kernels.TRACE_CAP).sum())} paths); mesh may be degenerate")
    return out_tri, out_bary, status


def trace_from_vertices(mesh, vertex_vectors, scale=1.0, backend=None):
    """Trace from every vertex along its own tangent vector times ``scale``."""
    n = mesh.n_vertices
    tri = mesh.vertex_first_face
    local = np.argmax(mesh.triangles[tri] == np.arange(n)[:, None], axis=1)
    bary = np.zeros((n, 3))
    bary[np.arange(n), local] = 1.0
    vec = rotate_into_plane(scale * np.asarray(vertex_vectors, dtype=np.float64),
                            mesh.vertex_normals, mesh.face_normals[tri])
    # keep the traced length equal to the vertex vector length
    nv = np.linalg.norm(vertex_vectors, axis=1) * abs(scale)
    nr = np.linalg.norm(vec, axis=1)
    vec = vec * np.where(nr > 0, nv / np.where(nr > 0, nr, 1.0), 0.0)[:, None]
    return trace(mesh, tri, bary, vec, backend=backend)


def exp_map(mesh, p, v, backend=None):
    """End point of the straightest geodesic of length ``|v|`` leaving ``p`` along ``v``.

    ``v`` is a :class:`~lesionflow.mesh.TangentVector` based at ``p`` (or at
    the vertex ``p`` sits on).
    """
    vec = v.to_3d(mesh)
    if not isinstance(v.base, SurfacePoint):
        vid = int(v.base)
        fn = mesh.face_normals[p.triangle][None]
        rot = rotate_into_plane(vec[None], mesh.vertex_normals[vid][None], fn)[0]
        nr = np.linalg.norm(rot)
        vec = rot * (np.linalg.norm(vec) / nr) if nr > 0 else rot
    tri, bary, _ = trace(mesh, [p.triangle], [p.bary], vec[None], backend=backend)
    return SurfacePoint(int(tri[0]), tuple(bary[0]))


__all__ = ["GeodesicError", "SteinerGraph", "steiner_graph", "geodesic_matrix", "pair_distances",
           "geodesic_distance", "trace", "trace_from_vertices", "exp_map", "embed"]
