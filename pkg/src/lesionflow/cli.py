"""Command line interface: ``lesionflow <command> ...``.

Exit status is 0 on success, 1 when a pipeline stage fails and 2 for
invalid arguments or configuration.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, io, pipeline
from .assignment import AssignConfig
from .flow import solve_flow
from .metrics import aggregate_subjects
from .overlay import export_overlay, locations_by_id

logger = logging.getLogger("lesionflow")


def _kv(text):
    key, sep, val = text.partition("=")
    if not sep or "." not in key:
        raise argparse.ArgumentTypeError("expected section.name=value")
    try:
        parsed = io.loads_toml(f"v = {val}")["v"]
    except ValueError:
        parsed = val
    return key, parsed


def _load_config(args):
    overrides = dict(args.set or [])
    if getattr(args, "units", None):
        overrides["units"] = args.units
    if getattr(args, "out_dir", None):
        overrides["out_dir"] = os.path.abspath(args.out_dir)
    return pipeline.PipelineConfig.from_toml(args.config, overrides)


# -- synth --------------------------------------------------------------------

def cmd_synth_make(args):
    from .synth import make_subject, write_subject
    from .templates import make_template

    template = make_template("capsule", args.resolution)
    params = {k: getattr(args, k) for k in ("bend", "twist", "bulge") if getattr(args, k) is not None}
    dirs = []
    for seed in range(args.seed, args.seed + args.count):
        out = args.out if args.count == 1 else os.path.join(args.out, f"subject_{seed:03d}")
        fx = make_subject(seed, params or None, n_lesions=args.n_lesions, texture_mode=args.texture,
                          registration_noise_mm=args.noise, template=template)
        files = write_subject(fx, out)
        io.write_toml(os.path.join(out, "config.toml"),
                      {"units": "mm", "seed": seed, "out_dir": "run", "inputs": files})
        dirs.append(out)
        logger.info("wrote subject %d to %s", seed, out)
    if args.count > 1:
        with open(os.path.join(args.out, "subjects.txt"), "w") as fh:
            fh.write("".join(os.path.join(os.path.basename(d), "config.toml") + "\n" for d in dirs))
    return 0


# -- run ------------------------------------------------------------------------

def _run_one(config_path, overrides, force):
    cfg = pipeline.PipelineConfig.from_toml(config_path, overrides)
    return pipeline.run_config(cfg, force=force)


def cmd_run(args):
    if bool(args.config) == bool(args.manifest):
        raise _UsageError("give exactly one of --config or --manifest")
    if args.config:
        cfg = _load_config(args)
        out = pipeline.run_config(cfg, force=args.force)
        print(os.path.join(out, pipeline.ARTIFACTS["report"]))
        return 0
    base = os.path.dirname(os.path.abspath(args.manifest))
    with open(args.manifest) as fh:
        configs = [os.path.join(base, ln.strip()) for ln in fh if ln.strip() and not ln.startswith("#")]
    overrides = dict(args.set or [])
    if args.units:
        overrides["units"] = args.units
    status = 0
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        futures = [pool.submit(_run_one, c, overrides, args.force) for c in configs]
        for c, fut in zip(configs, futures):
            try:
                out = fut.result()
                print(os.path.join(out, pipeline.ARTIFACTS["report"]))
            except (pipeline.StageError, pipeline.ArtifactMismatch) as exc:
                print(f"{c}: {exc}", file=sys.stderr)
                status = 1
    return status


def cmd_flow_solve(args):
    cfg = _load_config(args)
    template, dsrc, dtgt, src, tgt, ls, lt = pipeline.load_inputs(cfg)
    coarse = pipeline.compute_coarse(template, dsrc, dtgt, src, tgt)
    loc_s = pipeline.map_points(coarse.src_to_T, src, template, ls.tri, ls.bary)
    loc_t = pipeline.map_points(coarse.tgt_to_T, tgt, template, lt.tri, lt.bary)
    sig = pipeline.build_signals(template, coarse, src, tgt, loc_s, loc_t, cfg)
    tex = [(sig[f"{c}_src"], sig[f"{c}_tgt"]) for c in "RGB" if f"{c}_src" in sig]
    fld = solve_flow(template, tex, (sig["lesion_src"], sig["lesion_tgt"]), cfg.flow)
    fld.save(args.out, pipeline.run_hash(cfg))
    d = fld.diagnostics
    print(f"energy {d['energy_zero']:.6g} -> {d['energy']:.6g} (scale {d['scale']:g}), "
          f"{sum(s['cg_iters'] for s in d['solves'])} CG iterations, {d['seconds']:.2f} s")
    return 0


def cmd_match(args):
    cfg, man, template = pipeline.load_run(args.run_dir)
    acfg = cfg.assign.to_dict()
    for k in ("alpha", "beta", "steiner"):
        if getattr(args, k) is not None:
            acfg[k] = getattr(args, k)
    out = args.out or os.path.join(args.run_dir, "report_rematch.json")
    report = pipeline.rematch(args.run_dir, template, AssignConfig(**acfg), out, force=args.force)
    print(f"{len(report['matches'])} matches, {len(report['unmatched_src'])} unmatched source, "
          f"{len(report['unmatched_tgt'])} unmatched target -> {out}")
    return 0


def _cell(mean, std, scale=1.0, digits=1):
    return f"{mean * scale:.{digits}f} ({std * scale:.{digits}f})"


def cmd_evaluate(args):
    reports = [pipeline.evaluate_run(d, args.gt) for d in args.run_dirs]
    agg = aggregate_subjects([r.distances for r in reports], pipeline.THRESHOLDS)
    coarse = aggregate_subjects([r.coarse_distances for r in reports], pipeline.THRESHOLDS)
    acc = np.array([r.matching_accuracy for r in reports])
    f1 = np.array([r.f1 for r in reports])
    rows = [("method", "D_LP mm", "D_SW mm", "success@10mm %", "accuracy %", "F1 %")]
    for name, a, extra in (("coarse", coarse, None), ("refined", agg, (acc, f1))):
        rows.append((name, _cell(a.d_lp_mean, a.d_lp_std), _cell(a.d_sw_mean, a.d_sw_std),
                     f"{100 * a.success_rate_at(10):.1f}",
                     "-" if extra is None else _cell(acc.mean(), acc.std(), 100),
                     "-" if extra is None else _cell(f1.mean(), f1.std(), 100)))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    print(f"subjects: {len(reports)}")
    if args.json:
        io.write_json(args.json, {"subjects": {d: r.to_json() for d, r in zip(args.run_dirs, reports)},
                                  "refined": agg.to_json(), "coarse": coarse.to_json()})
    return 0


def cmd_export_overlay(args):
    cfg, man, template = pipeline.load_run(args.run_dir)
    report = io.read_json(args.report or os.path.join(args.run_dir, pipeline.ARTIFACTS["report"]))
    locs = locations_by_id(io.read_json(os.path.join(args.run_dir, pipeline.ARTIFACTS["locations"])))
    n = export_overlay(template, report, args.out, locs, args.radius)
    print(f"{n} glyphs -> {args.out}")
    return 0


# -- parser -----------------------------------------------------------------------

class _UsageError(ValueError):
    pass


def _config_args(p):
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--units", choices=sorted(io.UNIT_SCALE), help="override input length units")
    p.add_argument("--set", action="append", type=_kv, metavar="SECTION.NAME=VALUE",
                   help="override a configuration value (repeatable)")


def build_parser():
    ap = argparse.ArgumentParser(prog="lesionflow", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="synthetic fixtures")
    ssub = sp.add_subparsers(dest="synth_command", required=True)
    mk = ssub.add_parser("make", help="write a seeded subject (meshes, lesions, ground truth, config)")
    mk.add_argument("--seed", type=int, default=0)
    mk.add_argument("--count", type=int, default=1, help="subjects with consecutive seeds")
    mk.add_argument("--out", required=True)
    mk.add_argument("--n-lesions", type=int, default=100)
    mk.add_argument("--noise", type=float, default=3.0, help="registration noise RMS in mm")
    mk.add_argument("--texture", choices=("consistent", "inconsistent"), default="consistent")
    mk.add_argument("--resolution", type=int, default=90, help="capsule template resolution")
    for k in ("bend", "twist", "bulge"):
        mk.add_argument(f"--{k}", type=float)
    mk.set_defaults(func=cmd_synth_make)

    rp = sub.add_parser("run", help="full pipeline with per-stage artifacts")
    _config_args(rp)
    rp.add_argument("--manifest", help="text file listing one config path per line")
    rp.add_argument("--workers", type=int, default=None)
    rp.add_argument("--out-dir")
    rp.add_argument("--force", action="store_true", help="overwrite artifacts from a different config")
    rp.set_defaults(func=cmd_run)

    fp = sub.add_parser("flow", help="flow field only")
    fsub = fp.add_subparsers(dest="flow_command", required=True)
    fs = fsub.add_parser("solve")
    _config_args(fs)
    fs.add_argument("--out", required=True, help="output field blob")
    fs.set_defaults(func=cmd_flow_solve)

    mp = sub.add_parser("match", help="re-run the assignment on a finished run")
    mp.add_argument("--run-dir", required=True)
    mp.add_argument("--alpha", type=float)
    mp.add_argument("--beta", type=float)
    mp.add_argument("--steiner", type=int)
    mp.add_argument("--out")
    mp.add_argument("--force", action="store_true")
    mp.set_defaults(func=cmd_match)

    ep = sub.add_parser("evaluate", help="score runs against ground truth")
    ep.add_argument("run_dirs", nargs="+")
    ep.add_argument("--gt", help="ground-truth JSON (defaults to the run configuration's)")
    ep.add_argument("--json", help="also write the reports as JSON")
    ep.set_defaults(func=cmd_evaluate)

    op = sub.add_parser("export-overlay", help="colored PLY of matched and unmatched lesions")
    op.add_argument("--run-dir", required=True)
    op.add_argument("--report", help="report to draw (defaults to the run's)")
    op.add_argument("--out", required=True)
    op.add_argument("--radius", type=float, help="glyph radius in mm")
    op.set_defaults(func=cmd_export_overlay)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("run", "flow") and not getattr(args, "config", None) \
            and not getattr(args, "manifest", None):
        parser.error("--config is required")
    try:
        return args.func(args)
    except (pipeline.StageError, pipeline.ArtifactMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (_UsageError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
