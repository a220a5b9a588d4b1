"""A desk-scale trainable backend: per-pixel features into a tiny softmax
model (linear, or one tanh hidden layer).

It learns only the semantic branch; the instance loss components are
reported as zero and enter the total through the shared combiner. The
point is to close the self-training loop end to end with something that
genuinely trains, not to approximate a deep panoptic model.

Features per pixel: RGB, 3x3 box means per channel, 3x3 luminance
variance, and (x, y) normalized to [0, 1].
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from bloomseg.backend import btsr
from bloomseg.backend.base import (
    Backend,
    LossReport,
    LossWeights,
    TrainExample,
    TrainSchedule,
    lr_at,
)
from bloomseg.errors import BackendError
from bloomseg.raster import Raster, ScoreMap

log = logging.getLogger(__name__)

N_FEATURES = 9


def pixel_features(patch: Raster) -> np.ndarray:
    """(H, W, 9) float64 feature stack for one patch."""
    rgb = patch.data
    if rgb.shape[2] == 1:
        rgb = np.repeat(rgb, 3, axis=2)
    h, w = rgb.shape[:2]

    padded = np.pad(rgb, ((1, 1), (1, 1), (0, 0)), mode="edge")
    box_sum = np.zeros_like(rgb)
    box_sq = np.zeros((h, w), dtype=np.float64)
    lum_pad = padded.mean(axis=2)
    for dy in range(3):
        for dx in range(3):
            box_sum += padded[dy : dy + h, dx : dx + w]
            box_sq += lum_pad[dy : dy + h, dx : dx + w] ** 2
    box_mean = box_sum / 9.0
    lum_mean = box_mean.mean(axis=2)
    box_var = np.clip(box_sq / 9.0 - lum_mean**2, 0.0, None)

    xn = np.linspace(0.0, 1.0, w) if w > 1 else np.zeros(1)
    yn = np.linspace(0.0, 1.0, h) if h > 1 else np.zeros(1)
    xg, yg = np.meshgrid(xn, yn)

    return np.concatenate(
        [rgb, box_mean, box_var[:, :, None], xg[:, :, None], yg[:, :, None]], axis=2
    )


def _shapes(hidden_units: int) -> list[tuple[int, ...]]:
    if hidden_units == 0:
        return [(2, N_FEATURES), (2,)]
    return [(hidden_units, N_FEATURES), (hidden_units,), (2, hidden_units), (2,)]


def _unpack(flat: np.ndarray, hidden_units: int) -> list[np.ndarray]:
    out, pos = [], 0
    for shape in _shapes(hidden_units):
        size = int(np.prod(shape))
        out.append(flat[pos : pos + size].reshape(shape))
        pos += size
    return out


def n_params(hidden_units: int) -> int:
    return sum(int(np.prod(s)) for s in _shapes(hidden_units))


def _forward(flat: np.ndarray, x: np.ndarray, hidden_units: int):
    if hidden_units == 0:
        w, b = _unpack(flat, 0)
        return x @ w.T + b, None
    w1, b1, w2, b2 = _unpack(flat, hidden_units)
    hidden = np.tanh(x @ w1.T + b1)
    return hidden @ w2.T + b2, hidden


def loss_and_grad(
    flat: np.ndarray, x: np.ndarray, y: np.ndarray, hidden_units: int
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its analytic gradient."""
    n = x.shape[0]
    z, hidden = _forward(flat, x, hidden_units)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    loss = float(-np.mean(np.log(np.maximum(p[np.arange(n), y], 1e-300))))

    dz = p.copy()
    dz[np.arange(n), y] -= 1.0
    dz /= n
    if hidden_units == 0:
        dw = dz.T @ x
        db = dz.sum(axis=0)
        grad = np.concatenate([dw.ravel(), db])
    else:
        w1, b1, w2, b2 = _unpack(flat, hidden_units)
        dw2 = dz.T @ hidden
        db2 = dz.sum(axis=0)
        dh = dz @ w2
        da1 = dh * (1.0 - hidden**2)
        dw1 = da1.T @ x
        db1 = da1.sum(axis=0)
        grad = np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])
    return loss, grad


class ToyBackend(Backend):
    def __init__(self, hidden_units: int = 0):
        self.hidden_units = int(hidden_units)
        self._flat: np.ndarray | None = None
        self._loss: LossReport | None = None

    # -- prediction ---------------------------------------------------------

    def predict_logits(self, patch: Raster) -> ScoreMap:
        if self._flat is None:
            raise BackendError("toy backend asked to predict before training", "backend")
        h, w = patch.size
        feats = pixel_features(patch).reshape(h * w, N_FEATURES)
        z, _ = _forward(self._flat, feats, self.hidden_units)
        return ScoreMap.from_logits(z.reshape(h, w, 2))

    # -- training -----------------------------------------------------------

    def train(
        self,
        examples: list[TrainExample],
        schedule: TrainSchedule,
        weights: LossWeights,
        seed: int,
    ) -> str:
        if not examples:
            raise BackendError("toy backend got an empty training set", "backend")
        feats, labels = [], []
        for ex in examples:
            h, w = ex.image.size
            f = pixel_features(ex.image).reshape(h * w, N_FEATURES)
            t = ex.label.semantic.bits.reshape(h * w)
            if ex.valid is not None:
                keep = ex.valid.bits.reshape(h * w)
                f, t = f[keep], t[keep]
            feats.append(f)
            labels.append(t)
        x_pool = np.concatenate(feats)
        y_pool = np.concatenate(labels).astype(np.int64)
        if y_pool.size == 0:
            raise BackendError("every training pixel is masked invalid", "backend")
        fg_pool = np.flatnonzero(y_pool == 1)
        bg_pool = np.flatnonzero(y_pool == 0)
        if fg_pool.size == 0 or bg_pool.size == 0:
            log.warning(
                "training pool is single-class (%d fg / %d bg pixels)",
                fg_pool.size,
                bg_pool.size,
            )

        rng = np.random.default_rng(seed)
        if self._flat is None:
            self._flat = rng.normal(0.0, 0.01, n_params(self.hidden_units))
        flat = self._flat.copy()

        half = schedule.batch_size // 2
        ls_avg = None
        for it in range(schedule.iterations):
            idx = self._sample_batch(rng, fg_pool, bg_pool, half, schedule.batch_size)
            loss, grad = loss_and_grad(flat, x_pool[idx], y_pool[idx], self.hidden_units)
            if not np.isfinite(loss):
                raise BackendError(
                    f"non-finite loss at iteration {it} "
                    f"(lr={lr_at(schedule, it)}, batch={schedule.batch_size})",
                    "backend",
                )
            flat -= lr_at(schedule, it) * grad
            ls_avg = loss if ls_avg is None else 0.99 * ls_avg + 0.01 * loss

        self._flat = flat
        self._loss = LossReport.make(0.0, 0.0, 0.0, float(ls_avg), weights.lambda_)
        return self.weights_tag

    @staticmethod
    def _sample_batch(rng, fg_pool, bg_pool, half, batch_size):
        # 50/50 class balance per batch; degenerate pools fall back to one class
        if fg_pool.size == 0:
            return bg_pool[rng.integers(0, bg_pool.size, batch_size)]
        if bg_pool.size == 0:
            return fg_pool[rng.integers(0, fg_pool.size, batch_size)]
        a = fg_pool[rng.integers(0, fg_pool.size, half)]
        b = bg_pool[rng.integers(0, bg_pool.size, batch_size - half)]
        return np.concatenate([a, b])

    def last_loss(self) -> LossReport:
        if self._loss is None:
            raise BackendError("toy backend has not been trained", "backend")
        return self._loss

    # -- persistence --------------------------------------------------------

    @property
    def weights_tag(self) -> str:
        if self._flat is None:
            raise BackendError("toy backend has no weights yet", "backend")
        return hashlib.sha256(self._flat.astype("<f4").tobytes()).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        if self._flat is None:
            raise BackendError("cannot save an untrained toy backend", "backend")
        path = Path(path)
        btsr.write_tensor(path, self._flat.astype(np.float32))
        meta = {
            "kind": "toy",
            "hidden_units": self.hidden_units,
            "n_features": N_FEATURES,
            "tag": self.weights_tag,
        }
        with open(path.with_suffix(path.suffix + ".json"), "w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
            f.write("\n")

    def load(self, path: str | Path) -> None:
        path = Path(path)
        with open(path.with_suffix(path.suffix + ".json")) as f:
            meta = json.load(f)
        if meta.get("kind") != "toy":
            raise BackendError(f"{path}: not toy-backend weights", "backend")
        self.hidden_units = int(meta["hidden_units"])
        flat = btsr.read_tensor(path).astype(np.float64)
        if flat.size != n_params(self.hidden_units):
            raise BackendError(
                f"{path}: weight vector has {flat.size} values, expected "
                f"{n_params(self.hidden_units)}",
                "backend",
            )
        self._flat = flat
