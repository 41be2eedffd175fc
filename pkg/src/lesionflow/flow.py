"""Surface optical flow on the template and halfway advection of maps.

The unknown is one 2-vector per template vertex, expressed in the vertex
tangent basis.  On each face the field is the mean of its corner vectors
rotated into the face plane.  The energy

    E(v) = sum_pairs w * sum_faces area * 1/2 sum_i (<grad F_i, v> - (F_0 - F_1))^2
           + smoothness * sum_edges w_ij |v_i - T_ij v_j|^2
           + size * sum_vertices m_i |v_i|^2

is quadratic, ``E(v) = v'Av - 2b'v + c``.  ``T_ij`` transports vectors
between neighbouring tangent planes by the minimal rotation of normals and
``w_ij`` are cotangent weights clamped at zero.
"""

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse

from . import io
from .correspondence import CorrespondenceMap
from .geodesic import trace, trace_from_vertices
from .mesh import field_at_points, heat_diffuse, rotate_into_plane
from .solvers import SolverError, conjugate_gradient

logger = logging.getLogger(__name__)


@dataclass
class FlowConfig:
    """Weights and solver settings for the flow energy.

    ``smoothness_weight`` is dimensionless; ``size_weight`` is per mm^2.
    ``base_time`` (mm^2) is the diffusion time of hierarchy level 1; level
    ``l`` uses ``4**(l-1) * base_time`` and level 0 the raw signals.  When
    ``None`` it defaults to the squared mean edge length.
    """

    w_texture: float = 1.0
    w_lesion: float = 30.0
    smoothness_weight: float = 1.0
    size_weight: float = 1e-5
    levels: int = 3
    inner_iters: int = 2
    solver_tol: float = 1e-8
    solver_max_iters: int = 5000
    base_time: float = None

    def __post_init__(self):
        for name in ("w_texture", "w_lesion", "smoothness_weight", "size_weight"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be a nonnegative number, got {v!r}")
        if self.w_texture == 0 and self.w_lesion == 0:
            raise ValueError("at least one of w_texture, w_lesion must be positive")
        if int(self.levels) < 1 or int(self.inner_iters) < 1:
            raise ValueError("levels and inner_iters must be >= 1")
        if self.base_time is not None and self.base_time <= 0:
            raise ValueError("base_time must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class TangentField:
    """Per-vertex 2-vectors in the template vertex bases."""

    mesh_id: str
    components: np.ndarray
    diagnostics: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        self.components = np.asarray(self.components, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(self.components)):
            raise ValueError("tangent field has non-finite components")

    def to_3d(self, mesh):
        return np.einsum("nij,nj->ni", mesh.vertex_basis, self.components)

    def save(self, path, config_hash=None):
        io.write_field_blob(path, self.components, self.mesh_id, config_hash)

    @classmethod
    def load(cls, path):
        header, comp = io.read_field_blob(path)
        out = cls(header["mesh"], comp)
        out.config_hash = header.get("config_hash")
        return out


@dataclass
class QuadraticForm:
    """``E(x) = x'Ax - 2b'x + c`` over the stacked vertex components."""

    A: sparse.csr_matrix
    b: np.ndarray
    c: float

    def energy(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return float(x @ (self.A @ x) - 2.0 * self.b @ x + self.c)

    def gradient(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return 2.0 * (self.A @ x) - 2.0 * self.b


# -- operators -------------------------------------------------------------------

def face_average_operator(mesh):
    """Sparse (2m, 2n) map from vertex components to face-basis components."""
    key = "flow_Q"
    if key in mesh._cache:
        return mesh._cache[key]
    F = mesh.triangles
    m, n = mesh.n_triangles, mesh.n_vertices
    Bf = mesh.face_basis
    rows, cols, vals = [], [], []
    for k in range(3):
        v = F[:, k]
        Bv = mesh.vertex_basis[v]
        rot = np.stack([rotate_into_plane(Bv[:, :, c], mesh.vertex_normals[v], mesh.face_normals)
                        for c in range(2)], axis=2)
        T = np.einsum("mda,mdb->mab", Bf, rot) / 3.0
        for a in range(2):
            for b in range(2):
                rows.append(2 * np.arange(m) + a)
                cols.append(2 * v + b)
                vals.append(T[:, a, b])
    Q = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(2 * m, 2 * n))
    mesh._cache[key] = Q
    return Q


def edge_transport(mesh):
    """Undirected edges ``(i, j)``, clamped cotangent weights, and 2x2 maps from basis j to basis i."""
    key = "flow_transport"
    if key in mesh._cache:
        return mesh._cache[key]
    n = mesh.n_vertices
    r, c, w = mesh.cotan_weights
    lo, hi = np.minimum(r, c), np.maximum(r, c)
    W = sparse.csr_matrix((w, (lo, hi)), shape=(n, n))
    W.sum_duplicates()
    W = W.tocoo()
    i, j, w = W.row.astype(np.int64), W.col.astype(np.int64), np.maximum(W.data, 0.0)
    Bi, Bj = mesh.vertex_basis[i], mesh.vertex_basis[j]
    rot = np.stack([rotate_into_plane(Bj[:, :, k], mesh.vertex_normals[j], mesh.vertex_normals[i])
                    for k in range(2)], axis=2)
    T = np.einsum("eda,edb->eab", Bi, rot)
    mesh._cache[key] = (i, j, w, T)
    return mesh._cache[key]


def regularizer(mesh, smoothness, size):
    """Sparse SPD (for size > 0) matrix of the smoothness and size terms."""
    n = mesh.n_vertices
    i, j, w, T = edge_transport(mesh)
    rows, cols, vals = [], [], []
    eye = np.eye(2)
    for a in range(2):
        for b in range(2):
            rows += [2 * i + a, 2 * j + a, 2 * i + a, 2 * j + a]
            cols += [2 * i + b, 2 * j + b, 2 * j + b, 2 * i + b]
            vals += [smoothness * w * eye[a, b], smoothness * w * eye[a, b],
                     -smoothness * w * T[:, a, b], -smoothness * w * T[:, b, a]]
    mass = np.repeat(mesh.lumped_mass, 2)
    rows.append(np.arange(2 * n))
    cols.append(np.arange(2 * n))
    vals.append(size * mass)
    R = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(2 * n, 2 * n))
    R.sum_duplicates()
    return R


def face_gradients(mesh, values):
    """Per-face gradient of per-vertex scalars in face-basis components, shape (m, 2)."""
    g3 = np.einsum("mkd,mk->md", mesh.grad_bary, np.asarray(values, dtype=np.float64)[mesh.triangles])
    return np.einsum("mda,md->ma", mesh.face_basis, g3)


def _data_blocks(mesh, pairs):
    m = mesh.n_triangles
    H = np.zeros((m, 2, 2))
    h = np.zeros((m, 2))
    c = 0.0
    area = mesh.face_areas
    for f0, f1, w in pairs:
        if w == 0:
            continue
        delta = (np.asarray(f0) - np.asarray(f1))[mesh.triangles].mean(axis=1)
        for f in (f0, f1):
            g = face_gradients(mesh, f)
            s = 0.5 * w * area
            H += s[:, None, None] * g[:, :, None] * g[:, None, :]
            h += (s * delta)[:, None] * g
        c += float(w * np.sum(area * delta * delta))
    return H, h, c


def _block_diag(H):
    m = H.shape[0]
    rows = (2 * np.arange(m)[:, None, None] + np.arange(2)[None, :, None]).repeat(2, axis=2)
    cols = (2 * np.arange(m)[:, None, None] + np.arange(2)[None, None, :]).repeat(2, axis=1)
    return sparse.csr_matrix((H.reshape(-1), (rows.reshape(-1), cols.reshape(-1))), shape=(2 * m, 2 * m))


def assemble_energy(template, pairs, cfg):
    """Quadratic form of the flow energy at the given signals.

    Parameters
    ----------
    template : Mesh
    pairs : list of (signal_0, signal_1, weight)
        Per-vertex template signals; ``weight`` multiplies the data term.
    cfg : FlowConfig

    Returns
    -------
    QuadraticForm
        ``A`` is symmetric; it is positive definite when ``size_weight > 0``.
    """
    pairs = [(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64), float(w)) for a, b, w in pairs]
    if not pairs or all(w == 0 for _, _, w in pairs):
        raise ValueError("flow energy needs at least one signal pair with positive weight")
    for a, b, _ in pairs:
        if a.shape != (template.n_vertices,) or b.shape != (template.n_vertices,):
            raise ValueError("signals must be per-vertex arrays on the template")
    Q = face_average_operator(template)
    H, h, c = _data_blocks(template, pairs)
    A = (Q.T @ _block_diag(H) @ Q).tocsr()
    A = A + regularizer(template, cfg.smoothness_weight, cfg.size_weight)
    A = (0.5 * (A + A.T)).tocsr()
    A.sum_duplicates()
    b = Q.T @ h.reshape(-1)
    return QuadraticForm(A, b, c)


# -- solve -----------------------------------------------------------------------

def _signal_pairs(texture_pairs, lesion_pair, cfg):
    pairs = []
    if cfg.w_texture > 0:
        pairs += [(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64), cfg.w_texture)
                  for a, b in (texture_pairs or [])]
    if cfg.w_lesion > 0 and lesion_pair is not None:
        a, b = (np.asarray(s, dtype=np.float64) for s in lesion_pair)
        # an empty lesion set gives an all-zero signal; its term is dropped
        if np.any(a) and np.any(b):
            pairs.append((a, b, cfg.w_lesion))
    if not pairs:
        raise ValueError("no usable signal pair (missing texture with zero lesion weight, or empty lesion sets)")
    return pairs


def warp_signals(template, pairs, field3d):
    """Pull signal 0 back along ``-v/2`` and signal 1 along ``+v/2`` at every vertex."""
    if not np.any(field3d):
        return pairs
    t0, b0, _ = trace_from_vertices(template, field3d, scale=-0.5)
    t1, b1, _ = trace_from_vertices(template, field3d, scale=0.5)
    return [(template.interpolate(a, t0, b0), template.interpolate(b, t1, b1), w) for a, b, w in pairs]


def warped_energy(template, pairs, x, R):
    """Data mismatch after halfway warping by ``x`` plus the regularizer at ``x``."""
    v3 = np.einsum("nij,nj->ni", template.vertex_basis, x.reshape(-1, 2))
    warped = warp_signals(template, pairs, v3)
    _, _, c = _data_blocks(template, warped)
    xf = x.reshape(-1)
    return c + float(xf @ (R @ xf))


def solve_flow(template, texture_pairs, lesion_pair, cfg):
    """Coarse-to-fine flow between source and target signals on the template.

    Parameters
    ----------
    template : Mesh
    texture_pairs : list of (source, target) per-vertex arrays, optional
    lesion_pair : (source, target) per-vertex arrays or None
    cfg : FlowConfig

    Returns
    -------
    TangentField
        ``diagnostics`` holds the energies, line-search scale and per-solve
        CG statistics.  The returned field never has a higher level-0 warped
        energy than the zero field.
    """
    pairs = _signal_pairs(texture_pairs, lesion_pair, cfg)
    n = template.n_vertices
    base = cfg.base_time if cfg.base_time is not None else template.mean_edge_length ** 2
    R = regularizer(template, cfg.smoothness_weight, cfg.size_weight)
    x = np.zeros(2 * n)
    solves = []
    t_start = time.perf_counter()
    for level in range(int(cfg.levels) - 1, -1, -1):
        t = 0.0 if level == 0 else base * 4.0 ** (level - 1)
        if t > 0:
            stack = np.stack([s for a, b, _ in pairs for s in (a, b)], axis=1)
            smooth = heat_diffuse(template, stack, t)
            level_pairs = [(smooth[:, 2 * k], smooth[:, 2 * k + 1], w) for k, (_, _, w) in enumerate(pairs)]
        else:
            level_pairs = pairs
        for it in range(int(cfg.inner_iters)):
            v3 = np.einsum("nij,nj->ni", template.vertex_basis, x.reshape(-1, 2))
            warped = warp_signals(template, level_pairs, v3)
            qf = assemble_energy(template, warped, cfg)
            rhs = qf.b - R @ x
            try:
                res = conjugate_gradient(qf.A, rhs, tol=cfg.solver_tol, maxiter=cfg.solver_max_iters)
            except SolverError as exc:
                raise SolverError(f"flow solve failed at level {level}, iteration {it}",
                                  exc.residuals) from exc
            x = x + res.x
            solves.append({"level": level, "iter": it, "time": t, "cg_iters": res.iterations,
                           "residual": res.residuals[-1], "ritz_min": res.ritz_min,
                           "ritz_max": res.ritz_max})
            logger.debug("level %d iter %d: %d CG iterations, ritz [%.3g, %.3g]", level, it,
                         res.iterations, res.ritz_min, res.ritz_max)
    e0 = _data_blocks(template, pairs)[2]
    scale = 1.0
    e = warped_energy(template, pairs, x, R)
    if e > e0:
        # backtrack on the accumulated field until it is no worse than zero flow
        e, scale = e0, 0.0
        for s in 0.5 ** np.arange(1, 11):
            es = warped_energy(template, pairs, s * x, R)
            if es <= e0:
                e, scale = es, float(s)
                break
        logger.info("flow line search scaled the field by %.4g", scale)
    x = scale * x
    diag = {"energy_zero": e0, "energy": e, "scale": scale, "solves": solves,
            "seconds": time.perf_counter() - t_start}
    return TangentField(template.name, x.reshape(-1, 2), diag)


def advect_maps(phi_0_T, phi_1_T, field, template):
    """Move rows of the source map by ``+v/2`` and rows of the target map by ``-v/2``."""
    v3 = field.to_3d(template)
    out = []
    for cmap, sign in ((phi_0_T, 0.5), (phi_1_T, -0.5)):
        if len(cmap) and (cmap.tri.max() >= template.n_triangles):
            raise ValueError("map does not target the template")
        vec = sign * field_at_points(template, v3, cmap.tri, cmap.bary)
        tri, bary, _ = trace(template, cmap.tri, cmap.bary, vec)
        out.append(CorrespondenceMap(cmap.from_id, cmap.to_id, tri, bary))
    return tuple(out)
