"""Mesh, JSON, TOML and binary-blob input/output.

Meshes load from PLY (ASCII or binary, optional per-vertex RGB) and OBJ
(positions, optional ``vt`` and a texture image referenced through the MTL
``map_Kd`` entry).  Stage artifacts that hold large arrays are written as
binary blobs that start with the magic ``LFLW1`` followed by a JSON header.
"""

import hashlib
import json
import logging
import os
import struct
import sys

import numpy as np
from scipy import ndimage

from .mesh import Mesh

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

logger = logging.getLogger(__name__)

MAGIC = b"LFLW1"
KIND_MAP = 1
KIND_FIELD = 2
KIND_SIGNALS = 3
UNIT_SCALE = {"mm": 1.0, "m": 1000.0}

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class FormatError(ValueError):
    """A file does not follow the expected format."""


# -- meshes ----------------------------------------------------------------

def read_mesh(path, units="mm", name=None, validate=True):
    """Load a PLY or OBJ mesh and convert lengths to millimeters.

    Parameters
    ----------
    path : str or path-like
    units : {"mm", "m"}
        Length unit of the file.
    name : str, optional
        Mesh identifier; defaults to the file stem.
    """
    if units not in UNIT_SCALE:
        raise ValueError(f"unknown units {units!r} (expected mm or m)")
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ply":
        data = read_ply(path)
    elif ext == ".obj":
        data = read_obj(path)
    else:
        raise FormatError(f"unsupported mesh extension {ext!r} (expected .ply or .obj)")
    name = name or os.path.splitext(os.path.basename(path))[0]
    return Mesh(data["vertices"] * UNIT_SCALE[units], data["triangles"],
                vertex_colors=data.get("colors"), corner_uvs=data.get("corner_uvs"),
                texture=data.get("texture"), name=name, validate=validate)


def write_mesh(path, mesh, **kwargs):
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".ply":
        return write_ply(path, mesh.vertices, mesh.triangles, colors=mesh.vertex_colors, **kwargs)
    if ext == ".obj":
        return write_obj(path, mesh.vertices, mesh.triangles)
    raise FormatError(f"unsupported mesh extension {ext!r}")


def read_ply(path):
    """Parse a PLY file into ``{"vertices", "triangles", "colors"?, "comments"}``.

    Polygons with more than three corners are fan-triangulated.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    nl = raw.find(b"\n", end)
    header = raw[:end].decode("ascii", "replace").splitlines()
    body = raw[nl + 1:]
    fmt, elements, comments = None, [], []
    for line in header[1:]:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "comment":
            comments.append(line[len("comment"):].strip())
        elif tok[0] == "element":
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if not elements:
                raise FormatError(f"{path}: property before element")
            if tok[1] == "list":
                elements[-1]["props"].append((tok[4], "list", _ply_type(tok[2]), _ply_type(tok[3])))
            else:
                elements[-1]["props"].append((tok[2], "scalar", _ply_type(tok[1]), None))
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise FormatError(f"{path}: unsupported PLY format {fmt!r}")
    if fmt == "ascii":
        values = _ply_ascii(body, elements)
    else:
        values = _ply_binary(body, elements, "<" if fmt == "binary_little_endian" else ">")
    if "vertex" not in values or "face" not in values:
        raise FormatError(f"{path}: PLY needs vertex and face elements")
    v = values["vertex"]
    out = {"vertices": np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64),
           "comments": comments}
    if all(c in v for c in ("red", "green", "blue")):
        rgb = np.stack([v["red"], v["green"], v["blue"]], axis=1).astype(np.float64)
        if np.issubdtype(np.asarray(v["red"]).dtype, np.integer):
            rgb /= 255.0
        out["colors"] = rgb
    out["vertex_props"] = v
    f = values["face"]
    key = "vertex_indices" if "vertex_indices" in f else "vertex_index"
    if key not in f:
        raise FormatError(f"{path}: face element lacks vertex_indices")
    out["triangles"] = _fan(f[key])
    return out


def _ply_type(name):
    try:
        return _PLY_TYPES[name]
    except KeyError:
        raise FormatError(f"unknown PLY property type {name!r}") from None


def _ply_ascii(body, elements):
    lines = body.decode("ascii", "replace").splitlines()
    pos = 0
    out = {}
    for el in elements:
        rows = lines[pos:pos + el["count"]]
        pos += el["count"]
        if len(rows) < el["count"]:
            raise FormatError(f"truncated PLY element {el['name']}")
        cols = {p[0]: [] for p in el["props"]}
        for row in rows:
            tok = row.split()
            i = 0
            for name, kind, t, it in el["props"]:
                if kind == "list":
                    k = int(tok[i])
                    cols[name].append(np.array(tok[i + 1:i + 1 + k], dtype=it))
                    i += 1 + k
                else:
                    cols[name].append(tok[i])
                    i += 1
        out[el["name"]] = {name: (cols[name] if kind == "list" else np.array(cols[name], dtype=t))
                           for name, kind, t, _ in el["props"]}
    return out


def _ply_binary(body, elements, endian):
    off = 0
    out = {}
    for el in elements:
        n = el["count"]
        if not any(p[1] == "list" for p in el["props"]):
            dt = np.dtype([(name, endian + t) for name, _, t, _ in el["props"]])
            arr = np.frombuffer(body, dtype=dt, count=n, offset=off)
            off += n * dt.itemsize
            out[el["name"]] = {name: arr[name].copy() for name in dt.names}
            continue
        # fast path: every list has three entries (plain triangle meshes)
        fields = []
        for name, kind, t, it in el["props"]:
            if kind == "list":
                fields += [(name + "__n", endian + t), (name, endian + it, (3,))]
            else:
                fields.append((name, endian + t))
        dt = np.dtype(fields)
        if off + n * dt.itemsize <= len(body):
            arr = np.frombuffer(body, dtype=dt, count=n, offset=off)
            if all(np.all(arr[p[0] + "__n"] == 3) for p in el["props"] if p[1] == "list"):
                off += n * dt.itemsize
                out[el["name"]] = {p[0]: arr[p[0]].copy() for p in el["props"]}
                continue
        cols = {p[0]: [] for p in el["props"]}
        for _ in range(n):
            for name, kind, t, it in el["props"]:
                if kind == "list":
                    k = int(np.frombuffer(body, endian + t, 1, off)[0])
                    off += np.dtype(t).itemsize
                    cols[name].append(np.frombuffer(body, endian + it, k, off).copy())
                    off += k * np.dtype(it).itemsize
                else:
                    cols[name].append(np.frombuffer(body, endian + t, 1, off)[0])
                    off += np.dtype(t).itemsize
        out[el["name"]] = {p[0]: (cols[p[0]] if p[1] == "list" else np.array(cols[p[0]]))
                           for p in el["props"]}
    return out


def _fan(polys):
    if isinstance(polys, np.ndarray) and polys.ndim == 2 and polys.shape[1] == 3:
        return polys.astype(np.int64)
    tris = []
    for poly in polys:
        poly = [int(i) for i in poly]
        if len(poly) < 3:
            raise FormatError("face with fewer than three vertices")
        tris.extend((poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1))
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def write_ply(path, vertices, triangles, colors=None, vertex_props=None, comments=(), binary=True):
    """Write a triangle mesh as PLY.

    Positions are stored as doubles.  ``colors`` in [0, 1] become ``uchar``
    RGB; ``vertex_props`` maps extra property names to ``uchar`` arrays.
    """
    V = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    F = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    extra = dict(vertex_props or {})
    fields += [(k, "u1") for k in extra]
    fmt = "binary_little_endian" if binary else "ascii"
    head = ["ply", f"format {fmt} 1.0"]
    head += [f"comment {c}" for c in comments]
    head.append(f"element vertex {len(V)}")
    types = {"<f8": "double", "u1": "uchar"}
    head += [f"property {types[t]} {n}" for n, t in fields]
    head += [f"element face {len(F)}", "property list uchar int vertex_indices", "end_header"]
    arr = np.zeros(len(V), dtype=np.dtype(fields))
    arr["x"], arr["y"], arr["z"] = V[:, 0], V[:, 1], V[:, 2]
    if colors is not None:
        rgb = np.clip(np.rint(np.asarray(colors, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
        arr["red"], arr["green"], arr["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    for k, val in extra.items():
        arr[k] = np.asarray(val, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        if binary:
            fh.write(arr.tobytes())
            farr = np.zeros(len(F), dtype=np.dtype([("n", "u1"), ("i", "<i4", (3,))]))
            farr["n"] = 3
            farr["i"] = F
            fh.write(farr.tobytes())
        else:
            for row in arr:
                fh.write((" ".join(repr(float(x)) if isinstance(x, np.floating) else str(int(x))
                                   for x in row) + "\n").encode("ascii"))
            for tri in F:
                fh.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n".encode("ascii"))


def read_obj(path):
    """Parse an OBJ file.

    Returns positions, triangles and, when present, per-corner UVs and the
    ``map_Kd`` texture of the first material that names one.  ``v`` lines
    with six numbers carry per-vertex RGB.
    """
    V, C, VT, F, FT = [], [], [], [], []
    mtllib = None
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line in fh:
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "v":
                V.append([float(x) for x in tok[1:4]])
                if len(tok) >= 7:
                    C.append([float(x) for x in tok[4:7]])
            elif tok[0] == "vt":
                VT.append([float(x) for x in tok[1:3]])
            elif tok[0] == "f":
                idx, tix = [], []
                for corner in tok[1:]:
                    parts = corner.split("/")
                    idx.append(_obj_index(parts[0], len(V)))
                    tix.append(_obj_index(parts[1], len(VT)) if len(parts) > 1 and parts[1] else -1)
                for i in range(1, len(idx) - 1):
                    F.append((idx[0], idx[i], idx[i + 1]))
                    FT.append((tix[0], tix[i], tix[i + 1]))
            elif tok[0] == "mtllib" and mtllib is None:
                mtllib = line.split(None, 1)[1].strip()
    out = {"vertices": np.array(V, dtype=np.float64).reshape(-1, 3),
           "triangles": np.array(F, dtype=np.int64).reshape(-1, 3)}
    if C and len(C) == len(V):
        out["colors"] = np.array(C, dtype=np.float64)
    FT = np.array(FT, dtype=np.int64).reshape(-1, 3)
    if VT and np.all(FT >= 0):
        out["corner_uvs"] = np.array(VT, dtype=np.float64)[FT]
        tex = _mtl_texture(os.path.dirname(os.fspath(path)), mtllib) if mtllib else None
        if tex is not None:
            out["texture"] = tex
        else:
            out.pop("corner_uvs")
            logger.warning("%s: texture coordinates without a readable map_Kd image; ignoring UVs", path)
    return out


def _obj_index(s, n):
    i = int(s)
    return i - 1 if i > 0 else n + i


def _mtl_texture(folder, mtllib):
    mtl = os.path.join(folder, mtllib)
    if not os.path.exists(mtl):
        return None
    with open(mtl, "r", encoding="utf-8", errors="replace") as fh:
        for line in fh:
            tok = line.split(None, 1)
            if tok and tok[0] == "map_Kd" and len(tok) > 1:
                return read_image(os.path.join(folder, tok[1].strip().split()[-1]))
    return None


def read_image(path):
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_obj(path, vertices, triangles, corner_uvs=None, texture_path=None):
    """Write an OBJ; with ``corner_uvs`` and ``texture_path`` an MTL is written alongside."""
    V = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    F = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    path = os.fspath(path)
    lines = []
    if corner_uvs is not None and texture_path is not None:
        mtl = os.path.splitext(path)[0] + ".mtl"
        with open(mtl, "w") as fh:
            fh.write(f"newmtl skin\nmap_Kd {os.path.basename(texture_path)}\n")
        lines += [f"mtllib {os.path.basename(mtl)}", "usemtl skin"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in V.tolist()]
    if corner_uvs is not None:
        uv = np.asarray(corner_uvs, dtype=np.float64).reshape(-1, 2)
        lines += [f"vt {u!r} {v!r}" for u, v in uv.tolist()]
        for f, tri in enumerate(F.tolist()):
            lines.append("f " + " ".join(f"{tri[k] + 1}/{3 * f + k + 1}" for k in range(3)))
    else:
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in F.tolist()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def bake_vertex_colors(mesh):
    """Per-vertex RGB by bilinear texture sampling at each vertex's UV.

    A vertex on a UV seam uses the coordinates of its corner in the lowest
    index triangle.
    """
    if mesh.vertex_colors is not None:
        return np.array(mesh.vertex_colors)
    if mesh.corner_uvs is None or mesh.texture is None:
        raise ValueError(f"{mesh.name}: mesh has no vertex colors or texture; "
                         "use lesion-only mode (w_texture = 0)")
    # corners in face-major order, so the first occurrence is the lowest face
    vid, first = np.unique(mesh.triangles.ravel(), return_index=True)
    if len(vid) != mesh.n_vertices:
        raise ValueError("isolated vertices have no texture coordinates")
    uv = mesh.corner_uvs.reshape(-1, 2)[first]
    return sample_texture(mesh.texture, uv)


def sample_texture(image, uv):
    """Bilinear lookup of an (h, w, c) image at UVs (v axis pointing up)."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    rows = (1.0 - np.clip(uv[:, 1], 0.0, 1.0)) * (h - 1)
    cols = np.clip(uv[:, 0], 0.0, 1.0) * (w - 1)
    return np.stack([ndimage.map_coordinates(img[:, :, c], [rows, cols], order=1, mode="nearest")
                     for c in range(img.shape[2])], axis=1)


# -- JSON / TOML -------------------------------------------------------------

def write_json(path, obj):
    """Deterministic JSON (sorted keys, fixed indentation, repr floats)."""
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=True)
    with open(path, "w") as fh:
        fh.write(text + "\n")


def read_json(path):
    with open(path, "r") as fh:
        return json.load(fh)


def read_toml(path):
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def loads_toml(text):
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ValueError(str(exc)) from None


def write_toml(path, data):
    with open(path, "wb") as fh:
        tomli_w.dump(data, fh)


def config_hash(obj):
    """Short stable hash of a JSON-serializable configuration."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- binary blobs --------------------------------------------------------------

def write_blob(path, kind, header, payload):
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BI", kind, len(head)))
        fh.write(head)
        fh.write(payload)


def read_blob(path, kind=None):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: missing {MAGIC.decode()} header")
    k, n = struct.unpack_from("<BI", raw, len(MAGIC))
    if kind is not None and k != kind:
        raise FormatError(f"{path}: blob kind {k}, expected {kind}")
    start = len(MAGIC) + 5
    header = json.loads(raw[start:start + n].decode("utf-8"))
    return header, raw[start + n:]


_MAP_RECORD = np.dtype([("tri", "<u4"), ("bary", "<f8", (3,))])


def write_map_blob(path, tri, bary, from_id, to_id, config_hash=None):
    """Correspondence rows as (u32 triangle, 3 x f64 barycentric) records."""
    rec = np.zeros(len(tri), dtype=_MAP_RECORD)
    rec["tri"] = tri
    rec["bary"] = bary
    write_blob(path, KIND_MAP, {"from": from_id, "to": to_id, "rows": int(len(tri)),
                                "config_hash": config_hash}, rec.tobytes())


def read_map_blob(path):
    header, payload = read_blob(path, KIND_MAP)
    rec = np.frombuffer(payload, dtype=_MAP_RECORD, count=header["rows"])
    return header, rec["tri"].astype(np.int64), rec["bary"].astype(np.float64)


def write_field_blob(path, components, mesh_id, config_hash=None):
    comp = np.ascontiguousarray(components, dtype="<f8").reshape(-1, 2)
    write_blob(path, KIND_FIELD, {"mesh": mesh_id, "rows": int(len(comp)),
                                  "config_hash": config_hash}, comp.tobytes())


def read_field_blob(path):
    header, payload = read_blob(path, KIND_FIELD)
    comp = np.frombuffer(payload, dtype="<f8", count=2 * header["rows"]).reshape(-1, 2)
    return header, comp.copy()


def write_signals_blob(path, values, labels, mesh_id, config_hash=None):
    """Per-vertex signals, one column per label."""
    vals = np.ascontiguousarray(values, dtype="<f8").reshape(len(values), -1)
    write_blob(path, KIND_SIGNALS, {"mesh": mesh_id, "rows": int(vals.shape[0]), "labels": list(labels),
                                    "config_hash": config_hash}, vals.tobytes())


def read_signals_blob(path):
    header, payload = read_blob(path, KIND_SIGNALS)
    k = len(header["labels"])
    vals = np.frombuffer(payload, dtype="<f8", count=k * header["rows"]).reshape(-1, k)
    return header, vals.copy()
