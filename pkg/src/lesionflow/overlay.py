"""Colored PLY overlay of matched and unmatched lesions on the template."""

import colorsys
import hashlib

import numpy as np

from . import io
from .templates import icosphere

FLAG_TEMPLATE, FLAG_MATCHED_SRC, FLAG_MATCHED_TGT, FLAG_UNMATCHED_SRC, FLAG_UNMATCHED_TGT = range(5)
TEMPLATE_GRAY = (0.7, 0.7, 0.7)
UNMATCHED_SRC_COLOR = (0.0, 0.0, 0.0)
UNMATCHED_TGT_COLOR = (1.0, 1.0, 1.0)


def pair_color(src_id, tgt_id):
    """Stable saturated color for a matched pair (never gray, black or white)."""
    h = hashlib.sha1(f"{src_id}\x00{tgt_id}".encode()).digest()
    hue = int.from_bytes(h[:4], "little") / 2.0 ** 32
    return colorsys.hsv_to_rgb(hue, 0.85, 0.95)


def export_overlay(template, report, out_path, locations=None, glyph_radius=None):
    """Write the template with one small sphere per reported lesion.

    Parameters
    ----------
    template : Mesh
    report : dict
        Match report; unmatched entries carry their own positions.
    locations : dict, optional
        ``{"src": {id: (tri, bary)}, "tgt": {...}}`` placing matched
        lesions; required when the report has matches.
    glyph_radius : float, optional
        Defaults to twice the mean template edge length.

    Returns
    -------
    int
        Number of glyphs written.  The ``flag`` vertex property marks
        template vertices (0), matched source/target glyphs (1/2) and
        unmatched source/target glyphs (3/4).
    """
    r = 2.0 * template.mean_edge_length if glyph_radius is None else float(glyph_radius)
    glyphs = []
    for m in report.get("matches", []):
        if locations is None:
            raise ValueError("matched lesions need template locations to be placed")
        color = pair_color(m["src"], m["tgt"])
        for side, flag in (("src", FLAG_MATCHED_SRC), ("tgt", FLAG_MATCHED_TGT)):
            tri, bary = locations[side][m[side]]
            pos = template.embed_many(np.array([tri]), np.array([bary]))[0]
            glyphs.append((pos, color, flag))
    for key, color, flag in (("unmatched_src", UNMATCHED_SRC_COLOR, FLAG_UNMATCHED_SRC),
                             ("unmatched_tgt", UNMATCHED_TGT_COLOR, FLAG_UNMATCHED_TGT)):
        for u in report.get(key, []):
            glyphs.append((np.asarray(u["pos_mm"], dtype=np.float64), color, flag))
    comment = f"lesionflow overlay: {len(report.get('matches', []))} matches, {len(glyphs)} glyphs"
    if not glyphs:
        io.write_ply(out_path, template.vertices, template.triangles, comments=[comment])
        return 0
    sphere = icosphere(1, r)
    V, F = [template.vertices], [template.triangles]
    colors = [np.tile(TEMPLATE_GRAY, (template.n_vertices, 1))]
    flags = [np.full(template.n_vertices, FLAG_TEMPLATE)]
    offset = template.n_vertices
    for pos, color, flag in glyphs:
        V.append(sphere.vertices + pos)
        F.append(sphere.triangles + offset)
        colors.append(np.tile(color, (sphere.n_vertices, 1)))
        flags.append(np.full(sphere.n_vertices, flag))
        offset += sphere.n_vertices
    io.write_ply(out_path, np.vstack(V), np.vstack(F), colors=np.vstack(colors),
                 vertex_props={"flag": np.concatenate(flags)}, comments=[comment])
    return len(glyphs)


def locations_by_id(locations_json, stage="refined"):
    """``{"src": {id: (tri, bary)}, "tgt": ...}`` from a run's lesion location file."""
    out = {}
    for side in ("src", "tgt"):
        out[side] = {e["id"]: (int(e["tri"]), np.asarray(e["bary"], dtype=np.float64))
                     for e in locations_json[f"{stage}_{side}"]}
    return out
