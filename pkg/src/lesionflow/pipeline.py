"""End-to-end pipeline: coarse maps, signals, flow, advection, assignment, report.

:func:`run_pipeline` works on in-memory objects.  :func:`run_config` loads
inputs from a TOML configuration and persists every stage to an output
directory; each artifact carries the configuration hash and a run refuses
to overwrite artifacts produced under a different hash unless forced.
"""

import logging
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np
import scipy

from . import __version__, io, kernels
from .assignment import AssignConfig, build_cost, match_report, solve_assignment
from .correspondence import (CorrespondenceMap, DeformedTemplate, coarse_map_from_template,
                             coarse_map_to_template, map_points)
from .flow import FlowConfig, TangentField, advect_maps, solve_flow
from .metrics import EvalReport, gt_matrix, map_quality, matching_accuracy, prf1
from .signals import LesionSet, build_lesion_signal, texture_channels

logger = logging.getLogger(__name__)

INPUT_KEYS = ("template", "deformed_src", "deformed_tgt", "src_mesh", "tgt_mesh", "lesions_src", "lesions_tgt")
OPTIONAL_INPUTS = ("ground_truth",)
THRESHOLDS = (5.0, 10.0, 15.0, 20.0)


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and a remediation hint."""

    def __init__(self, stage, cause, hint):
        super().__init__(f"stage '{stage}' failed: {cause}\n  hint: {hint}")
        self.stage = stage
        self.hint = hint


class ArtifactMismatch(RuntimeError):
    """Existing artifacts were produced under a different configuration hash."""


@dataclass
class PipelineConfig:
    """Declarative run configuration (see README for the TOML layout)."""

    inputs: dict = field(default_factory=dict)
    flow: FlowConfig = field(default_factory=FlowConfig)
    assign: AssignConfig = field(default_factory=AssignConfig)
    lesion_diffusion_time: float = None
    use_texture: bool = True
    units: str = "mm"
    seed: int = 0
    out_dir: str = "run"

    def __post_init__(self):
        if isinstance(self.flow, dict):
            self.flow = FlowConfig(**self.flow)
        if isinstance(self.assign, dict):
            self.assign = AssignConfig(**self.assign)
        if self.units not in io.UNIT_SCALE:
            raise ValueError(f"units must be one of {sorted(io.UNIT_SCALE)}")
        if self.lesion_diffusion_time is not None and self.lesion_diffusion_time <= 0:
            raise ValueError("lesion_diffusion_time must be positive")

    def settings(self):
        """Everything except paths, as plain data."""
        return {"flow": self.flow.to_dict(), "assign": self.assign.to_dict(),
                "lesion_diffusion_time": self.lesion_diffusion_time, "use_texture": self.use_texture,
                "units": self.units, "seed": self.seed}

    def to_toml_dict(self):
        out = {"inputs": dict(self.inputs), "units": self.units, "seed": self.seed, "out_dir": self.out_dir,
               "signals": {"use_texture": self.use_texture},
               "flow": {k: v for k, v in self.flow.to_dict().items() if v is not None},
               "assign": self.assign.to_dict()}
        if self.lesion_diffusion_time is not None:
            out["signals"]["lesion_diffusion_time"] = self.lesion_diffusion_time
        return out

    @classmethod
    def from_toml(cls, path, overrides=None):
        return cls.from_dict(io.read_toml(path), os.path.dirname(os.path.abspath(path)), overrides)

    @classmethod
    def from_dict(cls, data, base=".", overrides=None):
        """Build from parsed TOML; relative paths resolve against ``base``."""
        inputs = {k: os.path.normpath(os.path.join(base, v)) for k, v in data.get("inputs", {}).items()}
        sig = data.get("signals", {})
        cfg = {"inputs": inputs, "flow": dict(data.get("flow", {})), "assign": dict(data.get("assign", {})),
               "lesion_diffusion_time": sig.get("lesion_diffusion_time"),
               "use_texture": sig.get("use_texture", True), "units": data.get("units", "mm"),
               "seed": int(data.get("seed", 0)),
               "out_dir": os.path.normpath(os.path.join(base, data.get("out_dir", "run")))}
        for key, val in (overrides or {}).items():
            if val is None:
                continue
            section, _, name = key.partition(".")
            if section == "signals" and name:
                cfg[name] = val
            elif section in ("flow", "assign") and name:
                cfg[section][name] = val
            elif name:
                raise ValueError(f"unknown configuration section {section!r}")
            else:
                cfg[section] = val
        return cls(**cfg)

    def validate_paths(self):
        missing = [k for k in INPUT_KEYS if k not in self.inputs]
        if missing:
            raise ValueError(f"config lacks input paths: {', '.join(missing)}")
        absent = [self.inputs[k] for k in INPUT_KEYS if not os.path.exists(self.inputs[k])]
        if absent:
            raise FileNotFoundError(f"input files not found: {', '.join(absent)}")


@dataclass
class CoarseMaps:
    src_to_T: CorrespondenceMap
    tgt_to_T: CorrespondenceMap
    T_to_src: CorrespondenceMap
    T_to_tgt: CorrespondenceMap


@dataclass
class PipelineResult:
    coarse: CoarseMaps
    field: TangentField
    refined_src_to_T: CorrespondenceMap
    refined_tgt_to_T: CorrespondenceMap
    signals: dict
    locations: dict
    pi: object
    report: dict
    timings: dict
    evaluation: EvalReport = None


def compute_coarse(template, deformed_src, deformed_tgt, src_mesh, tgt_mesh):
    return CoarseMaps(coarse_map_to_template(src_mesh, deformed_src, template),
                      coarse_map_to_template(tgt_mesh, deformed_tgt, template),
                      coarse_map_from_template(template, deformed_src, src_mesh),
                      coarse_map_from_template(template, deformed_tgt, tgt_mesh))


def _stage(name, hint):
    def wrap(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ArtifactMismatch, KeyboardInterrupt):
            raise
        except Exception as exc:
            raise StageError(name, f"{type(exc).__name__}: {exc}", hint) from exc
    return wrap


def build_signals(template, coarse, src_mesh, tgt_mesh, src_loc, tgt_loc, cfg):
    out = {}
    t = cfg.lesion_diffusion_time
    out["lesion_src"] = build_lesion_signal(template, *src_loc, diffusion_time=t).values
    out["lesion_tgt"] = build_lesion_signal(template, *tgt_loc, diffusion_time=t).values
    if cfg.use_texture and cfg.flow.w_texture > 0:
        for side, cmap, mesh in (("src", coarse.T_to_src, src_mesh), ("tgt", coarse.T_to_tgt, tgt_mesh)):
            for sig in texture_channels(template, cmap, mesh):
                out[f"{sig.channel}_{side}"] = sig.values
    return out


def run_pipeline(template, coarse, src_mesh, tgt_mesh, lesions_src, lesions_tgt, cfg):
    """Run signals, flow, advection and assignment given coarse maps.

    Returns
    -------
    PipelineResult
        ``locations`` holds template (tri, bary) of every lesion before
        (``coarse_*``) and after (``refined_*``) refinement.
    """
    timings = {}
    t0 = time.perf_counter()
    loc = {}
    loc["coarse_src"] = _stage("map-lesions", "check lesion files against the source mesh")(
        map_points, coarse.src_to_T, src_mesh, template, lesions_src.tri, lesions_src.bary)
    loc["coarse_tgt"] = _stage("map-lesions", "check lesion files against the target mesh")(
        map_points, coarse.tgt_to_T, tgt_mesh, template, lesions_tgt.tri, lesions_tgt.bary)
    sig = _stage("signals", "set use_texture = false for meshes without color (lesion-only mode)")(
        build_signals, template, coarse, src_mesh, tgt_mesh, loc["coarse_src"], loc["coarse_tgt"], cfg)
    timings["signals"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    tex = [(sig[f"{c}_src"], sig[f"{c}_tgt"]) for c in "RGB" if f"{c}_src" in sig]
    fld = _stage("flow", "raise solver_max_iters or size_weight; check signals are not all zero")(
        solve_flow, template, tex, (sig["lesion_src"], sig["lesion_tgt"]), cfg.flow)
    timings["flow"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    r_src, r_tgt = _stage("advect", "the template may be degenerate; run mesh validation")(
        advect_maps, coarse.src_to_T, coarse.tgt_to_T, fld, template)
    loc["refined_src"] = map_points(r_src, src_mesh, template, lesions_src.tri, lesions_src.bary)
    loc["refined_tgt"] = map_points(r_tgt, tgt_mesh, template, lesions_tgt.tri, lesions_tgt.bary)
    timings["advect"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pi, report = _stage("assign", "check alpha > 0 and beta >= 0")(
        assign, template, loc["refined_src"], loc["refined_tgt"], lesions_src.ids, lesions_tgt.ids, cfg.assign)
    timings["assign"] = time.perf_counter() - t0
    return PipelineResult(coarse, fld, r_src, r_tgt, sig, loc, pi, report, timings)


def assign(template, src_loc, tgt_loc, src_ids, tgt_ids, acfg):
    cost = build_cost(*src_loc, *tgt_loc, template, acfg)
    pi = solve_assignment(cost, acfg, src_ids, tgt_ids)
    report = match_report(pi, *src_loc, *tgt_loc, template, steiner=acfg.steiner)
    return pi, report


def evaluate(result, gt, src_ids, tgt_ids, template, steiner=1, thresholds=THRESHOLDS):
    """Score a pipeline result against ground truth restricted to the given ids."""
    gt = gt.restrict(src_ids, tgt_ids)
    rep = EvalReport()
    if gt.pairs:
        after = map_quality(gt, src_ids, *result.locations["refined_src"], tgt_ids,
                            *result.locations["refined_tgt"], template, thresholds, steiner)
        before = map_quality(gt, src_ids, *result.locations["coarse_src"], tgt_ids,
                             *result.locations["coarse_tgt"], template, thresholds, steiner)
        rep.d_lp_mean, rep.d_lp_std = after["d_lp_mean"], after["d_lp_std"]
        rep.d_sw_mean, rep.d_sw_std = after["d_lp_mean"], 0.0
        rep.success_rate = after["success_rate"]
        rep.coarse_d_lp_mean = before["d_lp_mean"]
        rep.coarse_success_rate = before["success_rate"]
        rep.distances = after["distances"].tolist()
        rep.coarse_distances = before["distances"].tolist()
    rep.matching_accuracy = matching_accuracy(result.pi, gt)
    p, r, f, flags = prf1(result.pi, gt_matrix(gt, src_ids, tgt_ids))
    rep.precision, rep.recall, rep.f1, rep.flags = p, r, f, flags
    rep.k_pred = int(result.pi.real.sum())
    rep.k_gt = len(gt.pairs)
    return rep


def run_fixture(fixture, cfg=None, keep_src=None, keep_tgt=None, coarse=None):
    """Pipeline on a synthetic fixture (optionally with lesions removed) plus evaluation."""
    cfg = cfg or PipelineConfig()
    fx = fixture
    if coarse is None:
        coarse = compute_coarse(fx.template, fx.deformed_src, fx.deformed_tgt, fx.src_mesh, fx.tgt_mesh)
    ls = fx.lesions_src if keep_src is None else fx.lesions_src.subset(keep_src)
    lt = fx.lesions_tgt if keep_tgt is None else fx.lesions_tgt.subset(keep_tgt)
    res = run_pipeline(fx.template, coarse, fx.src_mesh, fx.tgt_mesh, ls, lt, cfg)
    res.evaluation = evaluate(res, fx.gt, ls.ids, lt.ids, fx.template, cfg.assign.steiner)
    return res


# -- on-disk runs ----------------------------------------------------------------

ARTIFACTS = {
    "coarse_src_to_T": "coarse_src_to_template.lflw", "coarse_tgt_to_T": "coarse_tgt_to_template.lflw",
    "coarse_T_to_src": "coarse_template_to_src.lflw", "coarse_T_to_tgt": "coarse_template_to_tgt.lflw",
    "signals": "signals.lflw", "field": "field.lflw",
    "refined_src_to_T": "refined_src_to_template.lflw", "refined_tgt_to_T": "refined_tgt_to_template.lflw",
    "locations": "lesions_template.json", "report": "report.json", "manifest": "manifest.toml",
}


def load_inputs(cfg):
    cfg.validate_paths()
    p = cfg.inputs
    template = _stage("load", "template must be a valid PLY/OBJ mesh")(io.read_mesh, p["template"], cfg.units,
                                                                        "template")
    src = _stage("load", "source mesh must be a valid PLY/OBJ mesh")(io.read_mesh, p["src_mesh"], cfg.units,
                                                                     "src_mesh")
    tgt = _stage("load", "target mesh must be a valid PLY/OBJ mesh")(io.read_mesh, p["tgt_mesh"], cfg.units,
                                                                     "tgt_mesh")
    dsrc = _stage("load", "deformed templates must share the template triangles")(
        _load_deformed, p["deformed_src"], template, cfg.units, "deformed_src")
    dtgt = _stage("load", "deformed templates must share the template triangles")(
        _load_deformed, p["deformed_tgt"], template, cfg.units, "deformed_tgt")
    ls = _stage("load", "lesion JSON needs tri/bary or pos per lesion")(LesionSet.load, p["lesions_src"], src)
    lt = _stage("load", "lesion JSON needs tri/bary or pos per lesion")(LesionSet.load, p["lesions_tgt"], tgt)
    return template, dsrc, dtgt, src, tgt, ls, lt


def _load_deformed(path, template, units, name):
    m = io.read_mesh(path, units, name, validate=False)
    return DeformedTemplate.from_mesh(m, template)


def load_run(run_dir):
    """Configuration, manifest and template of a finished run directory."""
    man = io.read_toml(os.path.join(run_dir, ARTIFACTS["manifest"]))
    cfg = PipelineConfig.from_dict(man["config"], run_dir)
    template = io.read_mesh(cfg.inputs["template"], cfg.units, "template")
    return cfg, man, template


def run_hash(cfg):
    digests = {k: io.file_digest(cfg.inputs[k]) for k in INPUT_KEYS}
    return io.config_hash({"inputs": digests, "settings": cfg.settings()})


def _check_existing(out_dir, chash, force):
    man = os.path.join(out_dir, ARTIFACTS["manifest"])
    if os.path.exists(man) and not force:
        old = io.read_toml(man).get("config_hash")
        if old != chash:
            raise ArtifactMismatch(f"{out_dir} holds artifacts from config hash {old}, current is {chash}; "
                                   "use --force to overwrite or choose another output directory")


def run_config(cfg, force=False):
    """Run the pipeline from files and write all stage artifacts.

    Returns the output directory.
    """
    chash = run_hash(cfg)
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    _check_existing(out, chash, force)
    t_all = time.perf_counter()
    t0 = time.perf_counter()
    template, dsrc, dtgt, src, tgt, ls, lt = load_inputs(cfg)
    t_load = time.perf_counter() - t0
    t0 = time.perf_counter()
    coarse = _stage("coarse", "deformed templates must share the template connectivity")(
        compute_coarse, template, dsrc, dtgt, src, tgt)
    t_coarse = time.perf_counter() - t0
    path = lambda key: os.path.join(out, ARTIFACTS[key])  # noqa: E731
    coarse.src_to_T.save(path("coarse_src_to_T"), chash)
    coarse.tgt_to_T.save(path("coarse_tgt_to_T"), chash)
    coarse.T_to_src.save(path("coarse_T_to_src"), chash)
    coarse.T_to_tgt.save(path("coarse_T_to_tgt"), chash)
    res = run_pipeline(template, coarse, src, tgt, ls, lt, cfg)
    labels = sorted(res.signals)
    io.write_signals_blob(path("signals"), np.stack([res.signals[k] for k in labels], axis=1), labels,
                          template.name, chash)
    res.field.save(path("field"), chash)
    res.refined_src_to_T.save(path("refined_src_to_T"), chash)
    res.refined_tgt_to_T.save(path("refined_tgt_to_T"), chash)
    io.write_json(path("locations"), locations_json(res, ls, lt, chash))
    report = dict(res.report, config_hash=chash)
    io.write_json(path("report"), report)
    timings = {"load": t_load, "coarse": t_coarse, **res.timings, "total": time.perf_counter() - t_all}
    diag = res.field.diagnostics
    io.write_toml(path("manifest"), {
        "config_hash": chash, "config": _toml_safe(cfg.to_toml_dict()),
        "versions": {"lesionflow": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version(), "kernels": kernels.BACKEND},
        "timings_s": timings,
        "flow": {"energy_zero": diag["energy_zero"], "energy": diag["energy"], "scale": diag["scale"],
                 "cg_iterations": [s["cg_iters"] for s in diag["solves"]]},
        "artifacts": dict(ARTIFACTS),
    })
    logger.info("run finished in %.1f s, %d matches, report at %s", timings["total"],
                len(report["matches"]), path("report"))
    return out


def locations_json(res, ls, lt, chash):
    def pack(ids, loc):
        tri, bary = loc
        return [{"id": i, "tri": int(t), "bary": [float(x) for x in b]} for i, t, b in zip(ids, tri, bary)]

    return {"config_hash": chash,
            "coarse_src": pack(ls.ids, res.locations["coarse_src"]),
            "coarse_tgt": pack(lt.ids, res.locations["coarse_tgt"]),
            "refined_src": pack(ls.ids, res.locations["refined_src"]),
            "refined_tgt": pack(lt.ids, res.locations["refined_tgt"])}


def unpack_locations(entries):
    ids = [e["id"] for e in entries]
    tri = np.array([e["tri"] for e in entries], dtype=np.int64)
    bary = np.array([e["bary"] for e in entries], dtype=np.float64).reshape(-1, 3)
    return ids, tri, bary


def rematch(run_dir, template, acfg, out_path, force=False):
    """Re-run only the assignment on a finished run's template locations."""
    locs = io.read_json(os.path.join(run_dir, ARTIFACTS["locations"]))
    man = io.read_toml(os.path.join(run_dir, ARTIFACTS["manifest"]))
    if locs.get("config_hash") != man.get("config_hash") and not force:
        raise ArtifactMismatch(f"{run_dir}: lesion locations and manifest have different config hashes; "
                               "use --force to proceed")
    sids, stri, sbary = unpack_locations(locs["refined_src"])
    tids, ttri, tbary = unpack_locations(locs["refined_tgt"])
    pi, report = assign(template, (stri, sbary), (ttri, tbary), sids, tids, acfg)
    report = dict(report, config_hash=man.get("config_hash"),
                  assign=acfg.to_dict())
    io.write_json(out_path, report)
    return report


def _toml_safe(obj):
    if isinstance(obj, dict):
        return {k: _toml_safe(v) for k, v in obj.items() if v is not None}
    return obj



def evaluate_run(run_dir, gt_path=None, report_path=None):
    """Score a finished run against ground truth.

    ``gt_path`` defaults to the ``ground_truth`` input of the run's
    configuration.
    """
    from .assignment import report_to_matrix
    from .metrics import GroundTruth

    cfg, man, template = load_run(run_dir)
    gt_path = gt_path or cfg.inputs.get("ground_truth")
    if gt_path is None:
        raise ValueError(f"{run_dir}: no ground truth given and none recorded in the run configuration")
    gt = GroundTruth.from_json(io.read_json(gt_path))
    locs = io.read_json(os.path.join(run_dir, ARTIFACTS["locations"]))
    report = io.read_json(report_path or os.path.join(run_dir, ARTIFACTS["report"]))
    sids, stri, sbary = unpack_locations(locs["refined_src"])
    tids, ttri, tbary = unpack_locations(locs["refined_tgt"])
    _, cstri, csbary = unpack_locations(locs["coarse_src"])
    _, cttri, ctbary = unpack_locations(locs["coarse_tgt"])
    result = PipelineResult(None, None, None, None, {},
                            {"refined_src": (stri, sbary), "refined_tgt": (ttri, tbary),
                             "coarse_src": (cstri, csbary), "coarse_tgt": (cttri, ctbary)},
                            report_to_matrix(report, sids, tids), report, {})
    return evaluate(result, gt, sids, tids, template, cfg.assign.steiner)
