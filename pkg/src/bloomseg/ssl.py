"""The self-training loop: supervised initialization, then alternating
pseudo-label generation and backend retraining.

Each iteration r: predict logits for every rotated view of every window
of every unlabeled image with the weights from r-1, fuse the views into a
normalized score map, turn it into a crisp mask (refinement or a hard
threshold depending on the variant), expand the mask into per-angle
panoptic pseudo-labels, and retrain on those pairs. Iteration artifacts
are written to a staging directory and renamed into place only on
success, so a failed iteration leaves the previous state intact.

Inference tiles the image with identity views only, so the number of
backend calls per image never depends on the iteration count.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from bloomseg import augment, pseudolabel, rgr, tiling
from bloomseg.backend import Backend, LossWeights, TrainExample, TrainSchedule, make_backend
from bloomseg.errors import BackendError, DataError
from bloomseg.eval import pooled_pr_curve
from bloomseg.fusion import AugmentedPrediction, fuse, softmax_map
from bloomseg.raster import BinaryMask, Raster, ScoreMap, to_mask

log = logging.getLogger(__name__)

VARIANTS = ("ssl", "ssl-rgr", "ssl-rgr-pp")
TAU_GRID = tuple(round(0.01 * i, 2) for i in range(101))


def derive_seed(base: int, *parts) -> int:
    """Stable per-stage seed from the run seed and a provenance path."""
    text = ":".join([str(base)] + [str(p) for p in parts])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


@dataclass(frozen=True)
class SslConfig:
    window_factor: int = 4
    rotations: int = 20
    lambda_: float = 0.8
    rgr_params: rgr.RgrParams = field(default_factory=rgr.RgrParams)
    variant: str = "ssl-rgr"
    max_iter: int = 3
    seed: int = 0
    tau_seg: float | None = None          # None: select on the labeled PR curve
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    backend: str = "toy"
    retrain_from: str = "previous"        # previous | initial
    jobs: int = 1
    connectivity: int = 8
    min_instance_area: int = 0
    labeled_dataset: str | None = None
    unlabeled_dataset: str | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DataError(f"variant must be one of {VARIANTS}, got {self.variant}", "ssl")
        if self.retrain_from not in ("previous", "initial"):
            raise DataError("retrain_from must be previous|initial", "ssl")
        if self.max_iter < 0:
            raise DataError("max_iter must be >= 0", "ssl")

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["rgr_params"] = dataclasses.asdict(self.rgr_params)
        d["schedule"] = dataclasses.asdict(self.schedule)
        d["schedule"]["decay_points"] = list(self.schedule.decay_points)
        return d

    @staticmethod
    def from_json(d: dict) -> "SslConfig":
        d = dict(d)
        d["rgr_params"] = rgr.RgrParams(**d.get("rgr_params", {}))
        sched = dict(d.get("schedule", {}))
        if "decay_points" in sched:
            sched["decay_points"] = tuple(sched["decay_points"])
        d["schedule"] = TrainSchedule(**sched)
        return SslConfig(**d)


@dataclass(frozen=True)
class SslState:
    run_dir: Path
    iteration: int
    weights_tag: str
    tau_seg: float
    config: SslConfig
    label_dir: Path | None = None

    def iter_dir(self) -> Path:
        return self.run_dir / f"iter-{self.iteration}"


def _write_state(
    state_dir: Path,
    config: SslConfig,
    backend: Backend,
    iteration: int,
    tau_seg: float,
    metrics: dict,
) -> None:
    state_dir.mkdir(parents=True, exist_ok=True)
    backend.save(state_dir / "weights.btsr")
    with open(state_dir / "config.json", "w") as f:
        json.dump(config.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")
    with open(state_dir / "metrics.json", "w") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)
        f.write("\n")
    record = {
        "iteration": iteration,
        "weights_tag": backend.weights_tag,
        "tau_seg": tau_seg,
    }
    with open(state_dir / "state.json", "w") as f:
        json.dump(record, f, indent=2, sort_keys=True)
        f.write("\n")


def _mask_to_label_views(mask_bits, angles, sample_id, window, iteration, config):
    return pseudolabel.to_panoptic(
        BinaryMask(mask_bits),
        angles,
        sample_id,
        window,
        iteration,
        config.connectivity,
        config.min_instance_area,
    )


def init_supervised(
    samples,
    config: SslConfig,
    run_dir: str | Path,
    backend: Backend | None = None,
) -> tuple[SslState, Backend]:
    """Alg. lines 1-2: augment the labeled set and train the initial model."""
    if not samples:
        raise DataError("supervised initialization needs labeled samples", "ssl")
    run_dir = Path(run_dir)
    if backend is None:
        backend = make_backend(config.backend)
    angles = augment.sample_angles(config.rotations, config.seed)

    examples: list[TrainExample] = []
    for sample in samples:
        image = sample.image()
        mask = sample.mask()
        if mask.size != image.size:
            raise DataError(
                f"mask size {mask.size} misaligned with image {image.size} "
                f"for sample {sample.sample_id}",
                "ssl",
            )
        grid = tiling.plan_grid(image.size, config.window_factor)
        for w in range(grid.count):
            patch = tiling.extract(image, grid, w)
            mask_patch = BinaryMask(tiling.extract_array(mask.bits, grid, w))
            labels = _mask_to_label_views(
                mask_patch.bits, angles, sample.sample_id, w, 0, config
            )
            for j, theta in enumerate(angles.angles):
                view = augment.rotate(patch, theta)
                examples.append(TrainExample(view.content, labels[j], view.validity))

    try:
        backend.train(
            examples,
            config.schedule,
            LossWeights(config.lambda_),
            derive_seed(config.seed, "train", 0),
        )
    except BackendError as e:
        raise BackendError(f"supervised initialization failed: {e}", e.module) from e

    staging = run_dir / ".staging-iter-0"
    if staging.exists():
        shutil.rmtree(staging)
    tau0 = 0.5 if config.tau_seg is None else config.tau_seg
    metrics = {"examples": len(examples), "loss": dataclasses.asdict(backend.last_loss())}
    _write_state(staging, config, backend, 0, tau0, metrics)
    final = run_dir / "iter-0"
    if final.exists():
        shutil.rmtree(final)
    staging.rename(final)
    state = SslState(run_dir, 0, backend.weights_tag, tau0, config)
    log.info("iter-0 trained: %d examples, weights %s", len(examples), state.weights_tag)
    return state, backend


def _pseudo_label_sample(sample, state: SslState, backend: Backend, angles, r: int):
    """Predict, fuse, refine and expand one unlabeled image into labels."""
    config = state.config
    image = sample.image()
    grid = tiling.plan_grid(image.size, config.window_factor)
    labels_out = []
    examples = []
    for w in range(grid.count):
        patch = tiling.extract(image, grid, w)
        views = [augment.rotate(patch, theta) for theta in angles.angles]
        preds = [
            AugmentedPrediction(j, backend.predict_logits(v.content), v.validity)
            for j, v in enumerate(views)
        ]
        fused = fuse(preds, angles, grid.patch_size)
        if config.variant == "ssl":
            mask = to_mask(fused.probs, state.tau_seg)
        else:
            mask = rgr.refine(
                patch,
                fused.probs,
                config.rgr_params,
                derive_seed(config.seed, "rgr", r, sample.sample_id, w),
            )
        labels = _mask_to_label_views(mask.bits, angles, sample.sample_id, w, r, config)
        labels_out.extend(labels)
        for j, view in enumerate(views):
            examples.append(TrainExample(view.content, labels[j], view.validity))
    return labels_out, examples


def generate_pseudo_labels(
    state: SslState,
    backend: Backend,
    samples,
    out_dir: str | Path,
    iteration: int | None = None,
) -> int:
    """Pseudo-labels only (no retraining); returns the label count."""
    angles = augment.sample_angles(state.config.rotations, state.config.seed)
    r = iteration if iteration is not None else state.iteration + 1
    total = 0
    for sample in samples:
        labels, _ = _pseudo_label_sample(sample, state, backend, angles, r)
        pseudolabel.write_labels(labels, out_dir)
        total += len(labels)
    return total


def select_threshold(curve: list[tuple[float, float, float]]) -> float:
    """Threshold with the best F1 on a (tau, precision, recall) curve;
    ties go to the larger threshold. Degenerate rows (P + R = 0) are skipped."""
    if not curve:
        raise DataError("cannot select a threshold from an empty PR curve", "ssl")
    best_tau = None
    best_f1 = -1.0
    for tau, p, r in curve:
        if p + r <= 0:
            continue
        f1 = 2 * p * r / (p + r)
        if f1 > best_f1 or (f1 == best_f1 and tau > best_tau):
            best_f1 = f1
            best_tau = tau
    if best_tau is None:
        raise DataError("every PR row is degenerate; cannot select threshold", "ssl")
    return best_tau


def tau_from_labeled(state: SslState, backend: Backend, samples) -> float:
    """Pick tau on the labeled training set with the current weights."""
    pairs = []
    for sample in samples:
        probs, _ = infer(state, backend, sample.image())
        pairs.append((probs, sample.mask()))
    return select_threshold(pooled_pr_curve(pairs, TAU_GRID))


def ssl_iterate(
    state: SslState,
    backend: Backend,
    unlabeled_samples,
    labeled_samples=None,
) -> SslState:
    """One self-training round; returns the new state, or raises leaving
    the previous state untouched."""
    config = state.config
    r = state.iteration + 1
    if r > config.max_iter:
        raise DataError(
            f"iteration {r} exceeds max_iter {config.max_iter}; state unchanged", "ssl"
        )
    if not unlabeled_samples:
        raise DataError("ssl iteration needs unlabeled samples", "ssl")

    tau = state.tau_seg
    if config.variant == "ssl" and config.tau_seg is None and labeled_samples:
        tau = tau_from_labeled(state, backend, labeled_samples)
        log.info("iter-%d: selected tau_seg=%.2f on the labeled set", r, tau)
    work_state = dataclasses.replace(state, tau_seg=tau)

    angles = augment.sample_angles(config.rotations, config.seed)
    staging = state.run_dir / f".staging-iter-{r}"
    if staging.exists():
        shutil.rmtree(staging)

    try:
        all_examples: list[TrainExample] = []
        label_count = 0
        if config.jobs > 1:
            with ThreadPoolExecutor(max_workers=config.jobs) as pool:
                results = list(
                    pool.map(
                        lambda s: _pseudo_label_sample(s, work_state, backend, angles, r),
                        unlabeled_samples,
                    )
                )
        else:
            results = [
                _pseudo_label_sample(s, work_state, backend, angles, r)
                for s in unlabeled_samples
            ]
        for labels, examples in results:
            pseudolabel.write_labels(labels, staging / "labels")
            all_examples.extend(examples)
            label_count += len(labels)

        if config.retrain_from == "initial":
            backend.load(state.run_dir / "iter-0" / "weights.btsr")
        backend.train(
            all_examples,
            config.schedule,
            LossWeights(config.lambda_),
            derive_seed(config.seed, "train", r),
        )
        metrics = {
            "iteration": r,
            "pseudo_labels": label_count,
            "examples": len(all_examples),
            "tau_seg": tau,
            "loss": dataclasses.asdict(backend.last_loss()),
        }
        _write_state(staging, config, backend, r, tau, metrics)
    except Exception:
        shutil.rmtree(staging, ignore_errors=True)
        raise

    final = state.run_dir / f"iter-{r}"
    if final.exists():
        shutil.rmtree(final)
    staging.rename(final)
    log.info("iter-%d complete: %d pseudo-labels, weights %s", r, label_count, backend.weights_tag)
    return SslState(state.run_dir, r, backend.weights_tag, tau, config, final / "labels")


def infer(
    state: SslState,
    backend: Backend,
    image: Raster,
    pp: bool | None = None,
    image_id: str = "",
) -> tuple[ScoreMap, BinaryMask]:
    """Full-image probabilities + mask via identity-view sliding windows.

    Exactly (2K-1)^2 backend predictions per image, independent of the
    SSL iteration. With post-processing enabled (explicitly or by the
    ssl-rgr-pp variant) the recomposed map is refined instead of hard
    thresholded.
    """
    config = state.config
    grid = tiling.plan_grid(image.size, config.window_factor)
    patches = []
    for w in range(grid.count):
        patch = tiling.extract(image, grid, w)
        logits = backend.predict_logits(patch)
        patches.append((w, softmax_map(logits)))
    probs = tiling.recompose(patches, grid)

    use_pp = config.variant == "ssl-rgr-pp" if pp is None else pp
    if use_pp:
        mask = rgr.refine(
            image,
            probs,
            config.rgr_params,
            derive_seed(config.seed, "infer-pp", state.iteration, image_id),
        )
    else:
        mask = to_mask(probs, state.tau_seg)
    return probs, mask


def load_state(run_dir: str | Path, iteration: int | None = None) -> tuple[SslState, Backend]:
    """Reload a run directory (latest iteration by default) plus its backend."""
    run_dir = Path(run_dir)
    iters = sorted(
        int(p.name.split("-", 1)[1])
        for p in run_dir.glob("iter-*")
        if p.is_dir() and p.name.split("-", 1)[1].isdigit()
    )
    if not iters:
        raise DataError(f"{run_dir} contains no trained iterations", "ssl")
    if iteration is None:
        iteration = iters[-1]
    if iteration not in iters:
        raise DataError(f"iteration {iteration} not found in {run_dir}", "ssl")
    it_dir = run_dir / f"iter-{iteration}"
    try:
        with open(it_dir / "config.json") as f:
            config = SslConfig.from_json(json.load(f))
        with open(it_dir / "state.json") as f:
            record = json.load(f)
    except FileNotFoundError as e:
        raise DataError(f"run state incomplete: {e}", "ssl") from e
    backend = make_backend(config.backend)
    backend.load(it_dir / "weights.btsr")
    label_dir = it_dir / "labels"
    state = SslState(
        run_dir,
        int(record["iteration"]),
        str(record["weights_tag"]),
        float(record["tau_seg"]),
        config,
        label_dir if label_dir.is_dir() else None,
    )
    return state, backend
