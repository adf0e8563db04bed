"""Command-line entry point.

One binary, subcommand style. Machine-readable results go to report files or
standard output; progress chatter goes to standard error. Exit codes:
0 success, 1 validation failure, 2 runtime failure, 3 completed with
rejected samples.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .camera import DEFAULT_CROP_SIZE, Extrinsics, Intrinsics, default_intrinsics, project
from .cascade import (
    PROBE_PLANE,
    PROBE_SCALE,
    Evidence,
    factorization_probe,
    reproject,
    run_cascade,
)
from .errors import BodyFitError
from .losses import LossWeights
from .metrics import keypoint_bbox_max_side, mpjpe, pa_mpjpe, pck, pve
from .model import JointSet2D, JointSet3D, Mesh
from .modelfile import checksum, load_model, save_model
from .optim import default_schedule, load_schedule
from .params import zero_params
from .toy import TOY_PRESETS, ToySpec, gen_toy_model

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _intrinsics_from_flags(args, record_intrinsics=None) -> Intrinsics:
    """Precedence: dataset record > explicit flags > heuristic default."""
    if record_intrinsics is not None:
        return record_intrinsics
    if args.focal is not None:
        c_x = args.cx if args.cx is not None else args.width / 2.0
        c_y = args.cy if args.cy is not None else args.height / 2.0
        return Intrinsics(args.focal, args.focal, c_x, c_y, args.width, args.height)
    return default_intrinsics(args.width, args.height, fov_deg=args.fov)


def _add_intrinsics_flags(parser, require_dims=True):
    parser.add_argument("--width", type=int, default=640 if not require_dims else None,
                        required=require_dims, help="image width in pixels")
    parser.add_argument("--height", type=int, default=480 if not require_dims else None,
                        required=require_dims, help="image height in pixels")
    parser.add_argument("--fov", type=float, default=None, help="horizontal field of view, degrees")
    parser.add_argument("--focal", type=float, default=None, help="focal length in pixels")
    parser.add_argument("--cx", type=float, default=None, help="principal point x")
    parser.add_argument("--cy", type=float, default=None, help="principal point y")


def _loss_weights_from_flags(args) -> LossWeights:
    return LossWeights(
        lambda_kp=args.lambda_kp,
        lambda_shape=args.lambda_shape,
        lambda_pose=args.lambda_pose,
        lambda_refine=args.lambda_refine,
    )


def _add_loss_flags(parser):
    parser.add_argument("--lambda-kp", type=float, default=LossWeights().lambda_kp)
    parser.add_argument("--lambda-shape", type=float, default=LossWeights().lambda_shape)
    parser.add_argument("--lambda-pose", type=float, default=LossWeights().lambda_pose)
    parser.add_argument("--lambda-refine", type=float, default=LossWeights().lambda_refine)


# -- subcommands -----------------------------------------------------------------


def cmd_gen_model(args) -> int:
    if args.preset:
        spec = TOY_PRESETS[args.preset]
    else:
        spec = ToySpec(
            joints=args.joints,
            pose_dofs=args.pose_dofs,
            skin_vertices=args.skin_verts,
            skeleton_vertices=args.skel_verts,
            shape_dims=args.betas,
            keypoints=args.keypoints,
        )
    model = gen_toy_model(args.seed, spec)
    digest = save_model(model, args.out)
    print(f"{digest}  {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    model = load_model(args.model)
    target = dataio.load_mesh(args.target)
    schedule = load_schedule(args.schedule, model) if args.schedule else default_schedule(model)
    if args.freeze_global == "off":
        from dataclasses import replace as _replace

        schedule = _replace(schedule, freeze_global=False)
    init = None
    if args.init == "provided":
        if not args.init_params:
            raise BodyFitError("--init provided requires --init-params")
        init = dataio.load_params(args.init_params)
    orient = None
    if args.global_orient:
        orient = np.array([float(x) for x in args.global_orient.split(",")])
        if orient.shape != (3,):
            raise BodyFitError("--global-orient needs three comma-separated values")
    fitted, reports = fit_model_to_mesh_cli(model, target, init, schedule, orient)
    dataio.save_params(args.out, fitted)
    for rep in reports:
        _progress(
            f"stage {rep.name}: iters={rep.iterations} objective={rep.objective:.6e} "
            f"pve={rep.pve_mm:.4f}mm"
        )
    print(f"final_pve_mm\t{reports[-1].pve_mm:.9f}")
    return EXIT_OK


def fit_model_to_mesh_cli(model, target, init, schedule, orient):
    from .fitting import fit_model_to_mesh

    return fit_model_to_mesh(
        model, target, init=init, schedule=schedule, source_global_orient=orient
    )


def cmd_convert(args) -> int:
    manifest, records = dataio.load_dataset(args.manifest)
    base = Path(args.manifest).parent
    source_path = args.source_model or manifest.source_model
    target_path = args.target_model or manifest.target_model
    if not source_path or not target_path:
        raise BodyFitError("source and target model paths must come from the manifest or flags")
    source_model = load_model(_resolve(base, source_path))
    target_model = load_model(_resolve(base, target_path))
    schedule = (
        load_schedule(args.schedule, target_model) if args.schedule else default_schedule(target_model)
    )
    outcomes = dataio.convert_dataset(
        records,
        source_model,
        target_model,
        schedule,
        convention=manifest.source_convention,
        init_mode=args.init,
        workers=args.workers,
        reject_pve_mm=args.reject_pve_mm,
    )
    accepted = [o.record for o in outcomes if o.accepted]
    rejected = [o for o in outcomes if not o.accepted]
    dataio.save_dataset(args.out, manifest, accepted)
    if args.rejects:
        dataio.save_dataset(args.rejects, manifest, [o.record for o in rejected])
    for o in rejected:
        _progress(f"rejected {o.record.sample_id}: {o.reason}")
    pves = [o.record.fit_report["pve_mm"] for o in outcomes if o.record.fit_report]
    mean_pve = float(np.mean(pves)) if pves else float("nan")
    print(f"converted\t{len(accepted)}")
    print(f"rejected\t{len(rejected)}")
    print(f"mean_pve_mm\t{mean_pve:.6f}")
    return EXIT_PARTIAL if rejected else EXIT_OK


def _resolve(base: Path, ref: str) -> Path:
    p = Path(ref)
    return p if p.is_absolute() or p.exists() else base / p


def _evidence_from_record(rec, args) -> Evidence:
    if rec.joints2d is None:
        raise BodyFitError(f"sample {rec.sample_id} has no 2-D keypoints")
    intr = _intrinsics_from_flags(args, rec.intrinsics)
    return Evidence(joints2d=rec.joints2d, intrinsics=intr, crop_size=args.crop)


def cmd_refine(args) -> int:
    model = load_model(args.model)
    _, records = dataio.load_dataset(args.evidence)
    weights = _loss_weights_from_flags(args)
    traces = []
    for rec in records:
        ev = _evidence_from_record(rec, args)
        trace = run_cascade(
            ev, model, stages=args.stages, steps_per_stage=args.steps_per_stage, weights=weights
        )
        traces.append((rec.sample_id, trace))
        proj = reproject(model, trace.final, ev)
        norm = keypoint_bbox_max_side(ev.joints2d)
        score = pck(proj, ev.joints2d, 0.05, norm)
        _progress(
            f"{rec.sample_id}: objective {trace.stages[0].objective:.4e} -> "
            f"{trace.stages[-1].objective:.4e}, pck05={score:.3f}"
        )
    if args.emit_trace:
        dataio.save_traces(args.emit_trace, traces)
    print(f"samples\t{len(traces)}")
    print(f"stages\t{args.stages}")
    return EXIT_OK


def cmd_probe(args) -> int:
    model = load_model(args.model)
    _, records = dataio.load_dataset(args.evidence)
    traces = dict(dataio.load_traces(args.trace))
    rows = []
    for rec in records:
        if rec.sample_id not in traces:
            continue
        ev = _evidence_from_record(rec, args)
        trace = traces[rec.sample_id]
        n_stages = len(trace.stages)
        for layer in range(n_stages):
            plane = factorization_probe(trace, ev, model, PROBE_PLANE, layer)
            scale = factorization_probe(trace, ev, model, PROBE_SCALE, layer)
            rows.append((rec.sample_id, layer, plane, scale))
    header = (
        "sample_id\tlayer\tplane_pck05\tplane_pck10\tscale_pck05\tscale_pck10"
    )
    lines = [header]
    for sid, layer, plane, scale in rows:
        lines.append(
            f"{sid}\t{layer}\t{plane[0]:.6f}\t{plane[1]:.6f}\t{scale[0]:.6f}\t{scale[1]:.6f}"
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        dataio._atomic_write_text(args.out, text)
    print(text, end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    preds = {r.sample_id: r for r in dataio.load_eval_records(args.pred)}
    gts = dataio.load_eval_records(args.gt)
    lines = ["sample_id\tmpjpe_mm\tpa_mpjpe_mm\tpve_mm\tpck05\tpck10"]
    sums: dict[str, list[float]] = {k: [] for k in ("mpjpe", "pa", "pve", "p05", "p10")}

    def fmt(x):
        return "nan" if x is None else f"{x:.6f}"

    for gt in gts:
        pred = preds.get(gt.sample_id)
        if pred is None:
            raise BodyFitError(f"prediction file is missing sample {gt.sample_id!r}")
        vals = {k: None for k in sums}
        if gt.joints3d is not None and pred.joints3d is not None:
            vals["mpjpe"] = mpjpe(JointSet3D(pred.joints3d), JointSet3D(gt.joints3d))
            vals["pa"] = pa_mpjpe(JointSet3D(pred.joints3d), JointSet3D(gt.joints3d))
        if gt.vertices is not None and pred.vertices is not None:
            vals["pve"] = pve(Mesh(pred.vertices), Mesh(gt.vertices))
        if gt.joints2d is not None and pred.joints2d is not None:
            gt2d = JointSet2D(gt.joints2d, gt.visibility2d)
            pr2d = JointSet2D(pred.joints2d, pred.visibility2d)
            norm = keypoint_bbox_max_side(gt2d)
            vals["p05"] = pck(pr2d, gt2d, 0.05, norm)
            vals["p10"] = pck(pr2d, gt2d, 0.10, norm)
        for k, v in vals.items():
            if v is not None:
                sums[k].append(v)
        lines.append(
            f"{gt.sample_id}\t{fmt(vals['mpjpe'])}\t{fmt(vals['pa'])}\t{fmt(vals['pve'])}"
            f"\t{fmt(vals['p05'])}\t{fmt(vals['p10'])}"
        )

    def agg(key):
        return fmt(float(np.mean(sums[key])) if sums[key] else None)

    lines.append(
        f"ALL\t{agg('mpjpe')}\t{agg('pa')}\t{agg('pve')}\t{agg('p05')}\t{agg('p10')}"
    )
    text = "\n".join(lines) + "\n"
    if args.out:
        dataio._atomic_write_text(args.out, text)
    print(text, end="")
    return EXIT_OK


def cmd_project(args) -> int:
    points = dataio.load_points3d(args.points)
    intr = _intrinsics_from_flags(args)
    if args.translation:
        t = np.array([float(x) for x in args.translation.split(",")])
    else:
        from .camera import lift_extrinsics

        t = lift_extrinsics(Extrinsics(args.s, args.tx, args.ty), intr, args.crop)
    projected = project(JointSet3D(points), intr, t)
    if args.out:
        dataio.save_points2d(args.out, projected.positions)
    for u, v in projected.positions:
        print(f"{u:.9f}\t{v:.9f}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bodyfit",
        description="Anatomically constrained body models: generate, fit, convert, refine, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-model", help="generate a deterministic synthetic model file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=sorted(TOY_PRESETS), default=None,
                   help="named size preset; skel-like is the full-size layout (46 pose DOFs, 10 shapes)")
    p.add_argument("--joints", type=int, default=6)
    p.add_argument("--pose-dofs", type=int, default=14)
    p.add_argument("--skin-verts", type=int, default=96)
    p.add_argument("--skel-verts", type=int, default=48)
    p.add_argument("--betas", type=int, default=4)
    p.add_argument("--keypoints", type=int, default=8)
    p.set_defaults(func=cmd_gen_model)

    p = sub.add_parser("fit", help="fit a model to a target mesh")
    p.add_argument("--model", required=True)
    p.add_argument("--target", required=True, help="mesh file to fit")
    p.add_argument("--out", required=True, help="fitted parameter file")
    p.add_argument("--schedule", default=None, help="JSON schedule config")
    p.add_argument("--init", choices=["zero", "provided"], default="zero")
    p.add_argument("--init-params", default=None)
    p.add_argument("--freeze-global", choices=["on", "off"], default="on")
    p.add_argument("--global-orient", default=None, help="axis-angle 'x,y,z' to convert and freeze")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("convert", help="batch-convert a dataset between models")
    p.add_argument("--manifest", required=True, help="input dataset file")
    p.add_argument("--out", required=True)
    p.add_argument("--schedule", default=None)
    p.add_argument("--source-model", default=None, help="override the manifest's source model path")
    p.add_argument("--target-model", default=None, help="override the manifest's target model path")
    p.add_argument("--init", choices=["zero", "provided"], default="zero")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--rejects", default=None, help="file for quarantined samples")
    p.add_argument("--reject-pve-mm", type=float, default=dataio.DEFAULT_REJECT_PVE_MM)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("refine", help="run the coarse-to-fine cascade on dataset evidence")
    p.add_argument("--model", required=True)
    p.add_argument("--evidence", required=True, help="dataset file with 2-D keypoints")
    p.add_argument("--stages", type=int, default=6)
    p.add_argument("--steps-per-stage", type=int, default=50)
    p.add_argument("--emit-trace", default=None)
    p.add_argument("--crop", type=float, default=DEFAULT_CROP_SIZE)
    _add_intrinsics_flags(p, require_dims=False)
    _add_loss_flags(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("probe", help="score per-layer extrinsic components against final parameters")
    p.add_argument("--model", required=True)
    p.add_argument("--evidence", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--crop", type=float, default=DEFAULT_CROP_SIZE)
    _add_intrinsics_flags(p, require_dims=False)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("eval", help="compare prediction and ground-truth record files")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("project", help="project 3-D points through a pinhole camera")
    p.add_argument("--points", required=True, help="points3d file")
    p.add_argument("--out", default=None)
    p.add_argument("--s", type=float, default=1.0)
    p.add_argument("--tx", type=float, default=0.0)
    p.add_argument("--ty", type=float, default=0.0)
    p.add_argument("--crop", type=float, default=DEFAULT_CROP_SIZE)
    p.add_argument("--translation", default=None, help="direct 'x,y,z' camera translation")
    _add_intrinsics_flags(p, require_dims=True)
    p.set_defaults(func=cmd_project)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except BodyFitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
