"""Command-line surface: one subcommand per pipeline stage.

Exit codes: 0 success, 2 usage error, 3 data error, 4 backend error.
Every run directory carries a config snapshot that round-trips through
SslConfig, so later stages can be driven from the recorded flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from bloomseg import data, eval as evalmod, rgr, ssl, synth
from bloomseg.backend import TrainSchedule
from bloomseg.errors import BackendError, BloomsegError, DataError
from bloomseg.raster import Raster, ScoreMap, read_image, read_mask, write_image, write_mask
from bloomseg.tiling import plan_grid

log = logging.getLogger("bloomseg")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window-factor", type=int, default=4, help="sliding window factor K")
    p.add_argument("--rotations", type=int, default=20, help="rotation views J per patch")
    p.add_argument("--lambda", dest="lambda_", type=float, default=0.8,
                   help="instance-vs-semantic loss weight")
    p.add_argument("--rgr-spacing", type=float, default=100.0)
    p.add_argument("--rgr-runs", type=int, default=10)
    p.add_argument("--rgr-fg", type=float, default=0.8)
    p.add_argument("--rgr-bg", type=float, default=0.01)
    p.add_argument("--rgr-threshold", type=float, default=0.5)
    p.add_argument("--rgr-spatial-weight", type=float, default=0.5)
    p.add_argument("--variant", choices=ssl.VARIANTS, default="ssl-rgr")
    p.add_argument("--max-iter", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau-seg", type=float, default=None,
                   help="fixed foreground threshold; default picks max-F1 on the labeled set")
    p.add_argument("--backend", default="toy", help="'toy' or 'external:<command>'")
    p.add_argument("--iterations", type=int, default=20000, help="training iterations")
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--base-lr", type=float, default=25e-4)
    p.add_argument("--retrain-from", choices=("previous", "initial"), default="previous")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    p.add_argument("--min-area", type=int, default=0,
                   help="drop pseudo-label instances smaller than this many pixels")


def _config_from_args(args) -> ssl.SslConfig:
    return ssl.SslConfig(
        window_factor=args.window_factor,
        rotations=args.rotations,
        lambda_=args.lambda_,
        rgr_params=rgr.RgrParams(
            spacing=args.rgr_spacing,
            num_runs=args.rgr_runs,
            scoremap_threshold=args.rgr_threshold,
            hi_fg=args.rgr_fg,
            hi_bg=args.rgr_bg,
            spatial_weight=args.rgr_spatial_weight,
        ),
        variant=args.variant,
        max_iter=args.max_iter,
        seed=args.seed,
        tau_seg=args.tau_seg,
        schedule=TrainSchedule(
            iterations=args.iterations,
            batch_size=args.batch_size,
            base_lr=args.base_lr,
        ),
        backend=args.backend,
        retrain_from=args.retrain_from,
        jobs=args.jobs,
        connectivity=args.connectivity,
        min_instance_area=args.min_area,
        labeled_dataset=getattr(args, "dataset", None),
        unlabeled_dataset=getattr(args, "unlabeled", None),
    )


def cmd_synth_gen(args) -> int:
    spec = synth.SceneSpec(
        size=(args.size, args.size),
        flower_count=(args.min_flowers, args.max_flowers),
        seed=args.seed,
    )
    for kind in args.shift or []:
        spec = synth.shift(spec, kind)
    pairs = synth.generate(spec, args.count)
    synth.write_dataset(args.out, pairs)
    log.info("wrote %d images to %s", args.count, args.out)
    return 0


def cmd_init_train(args) -> int:
    config = _config_from_args(args)
    samples = data.load_dataset(args.dataset, require_masks=True)
    state, _ = ssl.init_supervised(samples, config, args.run)
    log.info("initialized run %s (weights %s)", args.run, state.weights_tag)
    return 0


def cmd_ssl_run(args) -> int:
    state, backend = ssl.load_state(args.run)
    unlabeled = data.load_dataset(args.unlabeled)
    labeled = data.load_dataset(args.labeled, require_masks=True) if args.labeled else None
    if args.max_iter is not None:
        state = _replace_config(state, max_iter=args.max_iter)
    for _ in range(state.config.max_iter - state.iteration):
        state = ssl.ssl_iterate(state, backend, unlabeled, labeled)
    log.info("run %s now at iteration %d", args.run, state.iteration)
    return 0


def _replace_config(state: ssl.SslState, **overrides) -> ssl.SslState:
    import dataclasses

    return dataclasses.replace(
        state, config=dataclasses.replace(state.config, **overrides)
    )


def cmd_pseudo_label(args) -> int:
    state, backend = ssl.load_state(args.run)
    samples = data.load_dataset(args.images)
    n = ssl.generate_pseudo_labels(state, backend, samples, args.out)
    log.info("wrote %d pseudo-labels to %s", n, args.out)
    return 0


def cmd_infer(args) -> int:
    state, backend = ssl.load_state(args.run)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if Path(args.images).is_dir():
        samples = data.load_dataset(args.images)
    else:
        p = Path(args.images)
        samples = [data.FileSample(p.stem, p)]
    for sample in samples:
        probs, mask = ssl.infer(
            state, backend, sample.image(), pp=args.pp or None, image_id=sample.sample_id
        )
        write_mask(out / f"{sample.sample_id}_mask.png", mask)
        write_image(out / f"{sample.sample_id}_prob.png", Raster(probs.flower()[:, :, None]))
        log.info("inferred %s", sample.sample_id)
    return 0


def cmd_eval(args) -> int:
    gt_samples = {s.sample_id: s for s in data.load_dataset(args.gt, require_masks=True)}
    pred_dir = Path(args.pred)
    per_image = {}
    for sid, sample in sorted(gt_samples.items()):
        pred_path = pred_dir / f"{sid}_mask.png"
        if not pred_path.exists():
            pred_path = pred_dir / f"{sid}.png"
        if not pred_path.exists():
            raise DataError(f"no prediction found for {sid} in {pred_dir}", "cli")
        per_image[sid] = evalmod.pixel_metrics(read_mask(pred_path), sample.mask())

    report = evalmod.EvalReport(args.run_id, per_image)
    print(report.to_table())

    if args.folds:
        plan = evalmod.make_folds(sorted(per_image), args.folds, args.seed)
        for i, fold in enumerate(plan.folds):
            sub = evalmod.EvalReport(f"{args.run_id}/fold-{i}", {k: per_image[k] for k in fold})
            print()
            print(sub.to_table())

    if args.plot_data:
        if not args.probs:
            raise DataError("--plot-data needs --probs with probability maps", "cli")
        pairs = []
        for sid, sample in sorted(gt_samples.items()):
            prob_path = Path(args.probs) / f"{sid}_prob.png"
            if not prob_path.exists():
                raise DataError(f"no probability map for {sid} in {args.probs}", "cli")
            arr = read_image(prob_path).data[:, :, 0]
            planes = np.stack([1.0 - arr, arr], axis=2)
            pairs.append((ScoreMap.from_probs(planes), sample.mask()))
        rows = evalmod.pooled_pr_curve(pairs, ssl.TAU_GRID)
        evalmod.write_plot_data(args.plot_data, rows)
        log.info("wrote PR plot data to %s", args.plot_data)
    return 0


def cmd_grid_info(args) -> int:
    grid = plan_grid((args.rows, args.cols), args.window_factor)
    print(json.dumps({
        "patch_size": grid.patch_size,
        "stride": grid.stride,
        "windows": grid.count,
    }))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bloomseg",
        description="Self-training pseudo-label pipeline for flower segmentation",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate a synthetic ground-truthed dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--min-flowers", type=int, default=3)
    p.add_argument("--max-flowers", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shift", action="append", choices=("hue", "scale", "clutter"),
                   help="apply a domain shift to the scene spec (repeatable)")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("init-train", help="supervised initialization from labeled data")
    p.add_argument("--dataset", required=True, help="labeled dataset directory")
    p.add_argument("--run", required=True, help="run directory to create")
    _add_config_flags(p)
    p.set_defaults(func=cmd_init_train)

    p = sub.add_parser("ssl-run", help="iterate self-training on unlabeled data")
    p.add_argument("--run", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--labeled", default=None,
                   help="labeled set for tau selection (ssl variant)")
    p.add_argument("--max-iter", type=int, default=None)
    p.set_defaults(func=cmd_ssl_run)

    p = sub.add_parser("pseudo-label", help="write pseudo-labels without retraining")
    p.add_argument("--run", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("infer", help="full-image inference")
    p.add_argument("--run", required=True)
    p.add_argument("--images", required=True, help="image file or dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--pp", action="store_true", help="refine the recomposed map")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="directory of predicted masks")
    p.add_argument("--gt", required=True, help="dataset directory with masks/")
    p.add_argument("--probs", default=None, help="directory of probability maps")
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--run-id", default="eval")
    p.add_argument("--plot-data", default=None, help="write threshold/P/R/F1 rows here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid-info", help="print the window layout for an image size")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--window-factor", type=int, default=4)
    p.set_defaults(func=cmd_grid_info)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except DataError as e:
        print(f"error [{e.module}]: {e}", file=sys.stderr)
        return 3
    except BackendError as e:
        print(f"error [{e.module}]: {e}", file=sys.stderr)
        return 4
    except BloomsegError as e:
        print(f"error [{e.module}]: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
