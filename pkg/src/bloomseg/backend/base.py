"""The uniform segmentation-backend contract plus loss/schedule arithmetic.

A backend predicts two-class logits for a patch and can be (re)trained on
(patch, panoptic label) pairs. The multi-task total is

    total = lambda * (Lc + Lb + Lm) + (1 - lambda) * Ls

with classification / box / mask / semantic components; backends that
only learn the semantic branch report the instance components as zero.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from pathlib import Path

from bloomseg.errors import BackendError, DataError
from bloomseg.pseudolabel import PanopticPseudoLabel
from bloomseg.raster import BinaryMask, Raster, ScoreMap


@dataclass(frozen=True)
class LossWeights:
    lambda_: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.lambda_ <= 1.0:
            raise DataError(f"lambda must be in [0, 1], got {self.lambda_}", "backend")


def combine_loss(lc: float, lb: float, lm: float, ls: float, lambda_: float) -> float:
    """Weighted multi-task total; instance terms share one weight."""
    if not 0.0 <= lambda_ <= 1.0:
        raise DataError(f"lambda must be in [0, 1], got {lambda_}", "backend")
    for name, v in (("Lc", lc), ("Lb", lb), ("Lm", lm), ("Ls", ls)):
        if v < 0:
            raise DataError(f"loss component {name} is negative: {v}", "backend")
    # factored form of lambda*(lc+lb+lm) + (1-lambda)*ls: one rounding step
    # fewer, so the lambda in {0, 1} endpoints and simple literals are exact
    return lambda_ * ((lc + lb + lm) - ls) + ls


@dataclass(frozen=True)
class LossReport:
    lc: float
    lb: float
    lm: float
    ls: float
    total: float

    @staticmethod
    def make(lc: float, lb: float, lm: float, ls: float, lambda_: float) -> "LossReport":
        return LossReport(lc, lb, lm, ls, combine_loss(lc, lb, lm, ls, lambda_))


@dataclass(frozen=True)
class TrainSchedule:
    iterations: int = 20000
    batch_size: int = 512
    base_lr: float = 25e-4
    decay_points: tuple[float, ...] = (0.10, 0.25, 0.50)
    frozen_feature_extractor: bool = False

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise DataError("schedule needs positive iterations and batch size", "backend")
        pts = self.decay_points
        if any(not 0.0 < p < 1.0 for p in pts) or list(pts) != sorted(set(pts)):
            raise DataError(
                f"decay points must be strictly increasing within (0, 1), got {pts}",
                "backend",
            )


def lr_at(schedule: TrainSchedule, iteration: int) -> float:
    """Learning rate at an iteration: base divided by 10 per decay point passed."""
    if not 0 <= iteration < schedule.iterations:
        raise DataError(
            f"iteration {iteration} outside [0, {schedule.iterations})", "backend"
        )
    drops = sum(
        iteration >= round(p * schedule.iterations) for p in schedule.decay_points
    )
    return schedule.base_lr / (10 ** drops)


@dataclass(frozen=True)
class TrainExample:
    """One training view: the patch, its panoptic label, and (optionally)
    which pixels are genuine rather than rotation fill."""

    image: Raster
    label: PanopticPseudoLabel
    valid: BinaryMask | None = None

    def __post_init__(self):
        if self.image.size != self.label.semantic.size:
            raise DataError(
                f"patch {self.image.size} and label {self.label.semantic.size} "
                "sizes differ",
                "backend",
            )
        if self.valid is not None and self.valid.size != self.image.size:
            raise DataError("validity mask size differs from patch", "backend")


class Backend(abc.ABC):
    """Pluggable segmentation model f^W."""

    @abc.abstractmethod
    def predict_logits(self, patch: Raster) -> ScoreMap:
        """Two-class logits at patch size; deterministic for fixed weights."""

    @abc.abstractmethod
    def train(
        self,
        examples: list[TrainExample],
        schedule: TrainSchedule,
        weights: LossWeights,
        seed: int,
    ) -> str:
        """Fit on the examples and return the new weights tag."""

    @abc.abstractmethod
    def save(self, path: str | Path) -> None: ...

    @abc.abstractmethod
    def load(self, path: str | Path) -> None: ...

    @property
    @abc.abstractmethod
    def weights_tag(self) -> str:
        """Content tag of the current weights; raises if untrained."""

    def last_loss(self) -> LossReport:
        raise BackendError("backend has no recorded loss", "backend")
