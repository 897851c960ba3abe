"""splatgeom command line: complexity -> fit -> extract -> chamfer, plus synth, report and
spectrum-validate.

Exit codes: 0 success, 1 input error, 2 quality-gate failure.
"""

import argparse
import csv
import glob
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import extraction, semantics, shape_training, spectrum, synth
from .cameras import load_cameras_json
from .errors import SplatGeomError
from .splat_model import activate_cloud, read_splat_ply, save_splat_ply

log = logging.getLogger("splatgeom")

EXIT_OK, EXIT_INPUT, EXIT_GATE = 0, 1, 2


class QualityGateFailure(Exception):
    pass


def _threads(args):
    if getattr(args, "threads", None):
        return max(1, int(args.threads))
    return max(1, int(os.environ.get("SPLATGEOM_THREADS", "1")))


def _need_seed(args):
    if args.seed is None:
        raise SplatGeomError(f"'{args.command}' requires an explicit --seed")
    return int(args.seed)


def _emit(args, payload, text=None):
    if args.json or text is None:
        print(json.dumps(payload, indent=1, sort_keys=True))
    else:
        print(text)


def _png_files(directory):
    files = sorted(glob.glob(os.path.join(directory, "*.png")))
    if not files:
        raise SplatGeomError(f"no PNG files in {directory}")
    return files


# -- complexity ---------------------------------------------------------------

def _image_stats(mask_path, image_path, args):
    mask = semantics.load_mask(mask_path, args.label_count)
    if image_path is not None:
        image = semantics.load_gray(image_path)
        if image.shape != mask.labels.shape:
            raise SplatGeomError(f"{image_path}: size {image.shape} != mask {mask.labels.shape}")
    else:
        image = mask.labels / max(1, args.label_count - 1)
    edges = semantics.canny_edges(image, args.sigma, args.low, args.high)
    return semantics.group_edge_counts(edges, mask), semantics.label_pixel_counts(mask)


def cmd_complexity(args):
    masks = _png_files(args.masks)
    images = []
    for m in masks:
        cand = os.path.join(args.images, os.path.basename(m)) if args.images else None
        if cand is not None and not os.path.exists(cand):
            raise SplatGeomError(f"no image paired with mask {m} (looked for {cand})")
        images.append(cand)
    if not args.images:
        log.warning("no --images given; running Canny on the label images themselves")

    def work(pair):
        try:
            return _image_stats(pair[0], pair[1], args)
        except SplatGeomError as exc:
            raise SplatGeomError(f"{pair[0]}: {exc}") from exc

    with ThreadPoolExecutor(_threads(args)) as pool:
        per_image = list(pool.map(work, zip(masks, images)))
    captions = {}
    if args.captions:
        with open(args.captions) as fh:
            captions = {int(k): v for k, v in json.load(fh).items()}
    groups = semantics.aggregate_perplexity(
        per_image, labels=captions.keys(), image_ids=[os.path.basename(m) for m in masks],
        k1=args.k1, k2=args.k2, a_max=args.a_max, kappa=args.kappa, captions=captions)
    report = semantics.complexity_report(
        groups, args.k1, args.k2, args.a_max, args.kappa,
        {"sigma": args.sigma, "low": args.low, "high": args.high})
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
    lines = [f"k1={args.k1} k2={args.k2} a_max={args.a_max} kappa={args.kappa}",
             f"{'label':>5} {'caption':<12} {'P':>7} {'pixels':>8} {'p':>8} "
             f"{'a1*':>7} {'a2*':>7} {'N':>6}"]
    for g in groups:
        lines.append(f"{g.label:>5} {str(g.caption or ''):<12} {g.total_edges:>7} "
                     f"{g.pixel_count:>8} {g.unit_perplexity:>8.4f} {g.target_a1:>7.3f} "
                     f"{g.target_a2:>7.3f} {g.expected_count:>6}")
    _emit(args, report, "\n".join(lines))
    return report


# -- fit ----------------------------------------------------------------------

def _load_masks(cameras, masks_dir, label_count):
    out = []
    for cam in cameras:
        if cam.mask_path is None:
            raise SplatGeomError("camera entry lacks mask_path")
        path = cam.mask_path
        if masks_dir:
            path = os.path.join(masks_dir, os.path.basename(path))
        out.append(semantics.load_mask(path, label_count))
    return out


def cmd_fit(args):
    cloud = read_splat_ply(args.splats)
    cameras = load_cameras_json(args.cameras)
    masks = _load_masks(cameras, args.masks, args.label_count)
    groups = semantics.load_report(args.report)
    if args.k1 is not None or args.k2 is not None or args.a_max is not None:
        with open(args.report) as fh:
            header = json.load(fh)
        k1 = args.k1 if args.k1 is not None else header["k1"]
        k2 = args.k2 if args.k2 is not None else header["k2"]
        a_max = args.a_max if args.a_max is not None else header["a_max"]
        for g in groups:
            g.target_a1, g.target_a2 = semantics.target_shape(g.unit_perplexity, k1, k2, a_max)
    targets = semantics.targets_from_groups(groups)
    assignment = semantics.assign_labels(cloud.positions, cameras, masks, policy=args.policy,
                                         view=args.view)
    # labels seen in masks but missing from the report have no target: treat as unlabeled
    labels = np.where(np.isin(assignment.per_splat_label, list(targets)),
                      assignment.per_splat_label, 0)

    target_total = min(cloud.count, sum(g.expected_count for g in groups))
    warmup = args.warmup
    if warmup is None:
        warmup = int(round(args.iters * shape_training.DEFAULT_WARMUP
                           / shape_training.FULL_SCHEDULE_END))
    schedule = shape_training.TrainState(learning_rate=args.lr, warmup_iters=warmup,
                                         target_total=target_total, end_iter=args.iters)
    penalty = shape_training.PenaltyConfig(args.penalty, args.delta)
    result = shape_training.fit_shapes(cloud, labels, targets, penalty, lr=args.lr,
                                       iters=args.iters, schedule=schedule)
    os.makedirs(args.out_dir, exist_ok=True)
    fitted = result.cloud.subset(result.live_mask)
    save_splat_ply(fitted, os.path.join(args.out_dir, "fitted.ply"))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iteration", "gc_loss", "live_count"])
    for it, loss, live in result.trace:
        writer.writerow([it, repr(loss), live])
    with open(os.path.join(args.out_dir, "trace.csv"), "w") as fh:
        fh.write(buf.getvalue())

    weights = shape_training.LossWeights(args.lambda_gc, args.lambda_dssim, args.lambda_l1)
    final = result.final_loss
    summary = {
        "initial_count": cloud.count, "final_count": fitted.count,
        "target_total": target_total, "warmup": warmup, "iters": args.iters,
        "gc_loss_initial": result.trace[0][1], "gc_loss_final": final,
        # rendering terms need a rasterizer; only the weighted shape term is reported
        "weighted_gc": shape_training.total_loss(final, 0.0, 0.0, weights),
        "label_counts": {str(k): int(v) for k, v in
                         zip(*np.unique(labels, return_counts=True))},
        "converged": final <= args.gate,
    }
    text = (f"splats {cloud.count} -> {fitted.count} (target {target_total}), "
            f"gc_loss {summary['gc_loss_initial']:.6g} -> {final:.6g}")
    _emit(args, summary, text)
    if final > args.gate:
        raise QualityGateFailure(f"final gc_loss {final:.6g} above gate {args.gate}")
    return summary


# -- extract / chamfer ----------------------------------------------------------

def cmd_extract(args):
    cloud = activate_cloud(read_splat_ply(args.input))
    if args.mode == "hierarchical":
        pc = extraction.sample_points(cloud, args.n, _need_seed(args), weighting=args.weighting)
    else:
        pc = extraction.mean_extraction(cloud, args.min_alpha)
    if args.crop:
        pc = extraction.crop(pc, extraction.Aabb.parse(args.crop))
    extraction.write_points(pc, args.output)
    payload = {"count": len(pc), "mode": args.mode, "output": args.output}
    _emit(args, payload, f"wrote {len(pc)} points to {args.output}")
    return payload


def cmd_chamfer(args):
    a = extraction.read_points(args.a)
    b = extraction.read_points(args.b)
    mean, var = extraction.chamfer(a, b, squared=args.squared, workers=_threads(args))
    payload = {"mean": mean, "var": var, "count": len(a) + len(b)}
    _emit(args, payload)
    return payload


# -- spectrum / synth / report ------------------------------------------------

def cmd_spectrum_validate(args):
    files = _png_files(args.dir)
    images = [semantics.load_gray(f) for f in files]
    with ThreadPoolExecutor(_threads(args)) as pool:
        stats = list(pool.map(
            lambda im: spectrum.image_statistics(im, args.T, args.sigma, args.low, args.high),
            images))
    r = spectrum.pearson([s["edge_count"] for s in stats], [s["highpass_energy"] for s in stats])
    parseval = max(spectrum.parseval_rel_error(im) for im in images)
    payload = {"per_image": {os.path.basename(f): s for f, s in zip(files, stats)},
               "pearson_r": r, "parseval_max_rel_err": parseval}
    _emit(args, payload, f"{len(files)} images  pearson_r={r:.4f}  "
                         f"parseval_max_rel_err={parseval:.3g}")
    if len(files) < 10:
        log.warning("fewer than 10 images; correlation is not meaningful")
    return payload


def cmd_synth(args):
    seed = _need_seed(args)
    if args.kind == "corpus":
        synth.write_square_corpus(args.out, args.count)
    else:
        synth.write_scene_bundle(args.out, seed)
    payload = {"out": args.out, "kind": args.kind, "seed": seed}
    _emit(args, payload, f"wrote {args.kind} to {args.out}")
    return payload


def cmd_report(args):
    with open(args.input) as fh:
        results = json.load(fh)
    results = {s: {m: tuple(v) for m, v in per.items()} for s, per in results.items()}
    payload, text = extraction.report(results)
    if args.output:
        with open(args.output, "w") as fh:
            json.dump(payload, fh, indent=1)
    _emit(args, payload, text)
    return payload


# -- parser -------------------------------------------------------------------

def _canny_flags(p):
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--low", type=float, default=0.1)
    p.add_argument("--high", type=float, default=0.3)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--config", help="JSON file of flag defaults; explicit flags win")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--label-count", type=int, default=256)

    parser = argparse.ArgumentParser(prog="splatgeom", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("complexity", parents=[common], help="per-group perplexity report")
    p.add_argument("--masks", required=True)
    p.add_argument("--images")
    p.add_argument("--captions")
    p.add_argument("--k1", type=float, default=semantics.DEFAULT_K1)
    p.add_argument("--k2", type=float, default=semantics.DEFAULT_K2)
    p.add_argument("--a-max", type=float, default=semantics.DEFAULT_A_MAX)
    p.add_argument("--kappa", type=float, default=0.1)
    p.add_argument("--out")
    _canny_flags(p)
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("fit", parents=[common], help="fit splat shapes to semantic targets")
    p.add_argument("--splats", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--masks", help="directory overriding the cameras' mask locations")
    p.add_argument("--report", required=True)
    p.add_argument("--k1", type=float)
    p.add_argument("--k2", type=float)
    p.add_argument("--a-max", type=float)
    p.add_argument("--lambda-gc", type=float, default=shape_training.DEFAULT_WEIGHTS[0])
    p.add_argument("--lambda-dssim", type=float, default=shape_training.DEFAULT_WEIGHTS[1])
    p.add_argument("--lambda-l1", type=float, default=shape_training.DEFAULT_WEIGHTS[2])
    p.add_argument("--warmup", type=int, help="default: 20%% of --iters")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--penalty", choices=["huber", "smooth-abs", "logistic"], default="huber")
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--policy", choices=["majority", "per-view"], default="majority")
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--gate", type=float, default=1e-3, help="max final mean gc_loss")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("extract", parents=[common], help="point cloud from splats")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--n", type=int, default=5_000_000)
    p.add_argument("--mode", choices=["hierarchical", "mean"], default="hierarchical")
    p.add_argument("--weighting", choices=["alpha", "alpha-volume"], default="alpha")
    p.add_argument("--min-alpha", type=float, default=0.0)
    p.add_argument("--crop", help="x0,y0,z0,x1,y1,z1 (use --crop=... for negative values)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("chamfer", parents=[common], help="Chamfer mean/variance")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--squared", action="store_true")
    p.set_defaults(func=cmd_chamfer)

    p = sub.add_parser("spectrum-validate", parents=[common], help="edge/energy correlation")
    p.add_argument("--dir", required=True)
    p.add_argument("--T", type=float, default=0.1)
    _canny_flags(p)
    p.set_defaults(func=cmd_spectrum_validate)

    p = sub.add_parser("synth", parents=[common], help="write a seeded fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["scene", "corpus"], default="scene")
    p.add_argument("--count", type=int, default=50)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", parents=[common], help="Chamfer results table")
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_report)
    return parser


def parse_args(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        with open(known.config) as fh:
            cfg = {k.replace("-", "_"): v for k, v in json.load(fh).items()}
        subparsers = parser._subparsers._group_actions[0].choices
        for sp in subparsers.values():
            sp.set_defaults(**cfg)
            for action in sp._actions:
                if action.dest in cfg:
                    action.required = False
    return parser.parse_args(argv)


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        args.func(args)
    except QualityGateFailure as exc:
        log.error("%s", exc)
        return EXIT_GATE
    except (SplatGeomError, OSError, json.JSONDecodeError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
