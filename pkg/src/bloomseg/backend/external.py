"""Backend that talks to an external model process through files.

Each request is a fresh directory:

    req-NNNN/
      manifest.json     what to do (predict / train) and where files live
      input.btsr        predict: the patch tensor (H, W, C) float32
      patches/,labels/  train: training views + pseudo-labels on disk
      output.btsr       written by the backend (predict: (H, W, 2) logits)
      done              written last by the backend: {"status": ..., ...}

If a command is configured it is spawned once per request with the
request directory as its argument; otherwise an already-running process
is expected to watch the exchange directory. Either way the orchestrator
polls for the done marker until the timeout.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import tempfile
import time
from pathlib import Path

import numpy as np

from bloomseg.backend import btsr
from bloomseg.backend.base import Backend, LossWeights, TrainExample, TrainSchedule
from bloomseg.errors import BackendError
from bloomseg.pseudolabel import write_labels
from bloomseg.raster import Raster, ScoreMap, write_image, write_mask


class ExternalBackend(Backend):
    def __init__(
        self,
        command: str | None,
        exchange_dir: str | Path | None = None,
        timeout: float = 120.0,
        poll_interval: float = 0.02,
    ):
        self.command = command or None
        self.exchange_dir = Path(exchange_dir or tempfile.mkdtemp(prefix="bloomseg-xchg-"))
        self.exchange_dir.mkdir(parents=True, exist_ok=True)
        self.timeout = timeout
        self.poll_interval = poll_interval
        self._counter = 0
        self._tag: str | None = None

    # -- request plumbing ----------------------------------------------------

    def _new_request_dir(self) -> Path:
        d = self.exchange_dir / f"req-{self._counter:04d}"
        self._counter += 1
        d.mkdir(parents=True)
        return d

    def _run_and_wait(self, req: Path) -> dict:
        done = req / "done"
        if self.command:
            try:
                subprocess.run(
                    shlex.split(self.command) + [str(req)],
                    check=False,
                    timeout=self.timeout,
                    capture_output=True,
                )
            except subprocess.TimeoutExpired:
                raise BackendError(
                    f"backend command timed out after {self.timeout}s for {req}",
                    "backend",
                )
            # one-shot command mode: the reply must exist once it returns
            if not done.exists():
                raise BackendError(
                    f"backend command exited without writing a done marker in {req}",
                    "backend",
                )
        deadline = time.monotonic() + self.timeout
        while not done.exists():
            if time.monotonic() >= deadline:
                raise BackendError(
                    f"timeout after {self.timeout}s waiting for done marker in {req}",
                    "backend",
                )
            time.sleep(self.poll_interval)
        try:
            with open(done) as f:
                reply = json.load(f)
        except json.JSONDecodeError as e:
            raise BackendError(f"malformed done marker in {req}: {e}", "backend")
        if reply.get("status") != "ok":
            raise BackendError(
                f"backend reported failure for {req}: {reply.get('status')}", "backend"
            )
        return reply

    # -- contract ------------------------------------------------------------

    def predict_logits(self, patch: Raster) -> ScoreMap:
        req = self._new_request_dir()
        manifest = {
            "op": "predict",
            "input": "input.btsr",
            "output": "output.btsr",
        }
        btsr.write_tensor(req / "input.btsr", patch.data.astype(np.float32))
        with open(req / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=2)
        self._run_and_wait(req)

        out_path = req / "output.btsr"
        logits = btsr.read_tensor(out_path)
        expected = (patch.height, patch.width, 2)
        if logits.shape != expected:
            raise BackendError(
                f"{out_path}: logits shape {logits.shape} does not match "
                f"expected {expected}",
                "backend",
            )
        return ScoreMap.from_logits(logits.astype(np.float64))

    def train(
        self,
        examples: list[TrainExample],
        schedule: TrainSchedule,
        weights: LossWeights,
        seed: int,
    ) -> str:
        req = self._new_request_dir()
        patches = req / "patches"
        patches.mkdir()
        labels = []
        for ex in examples:
            prov = ex.label.provenance
            stem = f"{prov.sample_id}_{prov.window}_{prov.rotation}"
            write_image(patches / f"{stem}.png", ex.image)
            if ex.valid is not None:
                write_mask(patches / f"{stem}_valid.png", ex.valid)
            labels.append(ex.label)
        write_labels(labels, req / "labels")
        manifest = {
            "op": "train",
            "patches_dir": "patches",
            "labels_dir": "labels",
            "schedule": {
                "iterations": schedule.iterations,
                "batch_size": schedule.batch_size,
                "base_lr": schedule.base_lr,
                "decay_points": list(schedule.decay_points),
                "frozen_feature_extractor": schedule.frozen_feature_extractor,
            },
            "lambda": weights.lambda_,
            "seed": seed,
        }
        with open(req / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=2)
        reply = self._run_and_wait(req)
        tag = reply.get("weights_tag")
        if not tag:
            raise BackendError(f"train reply in {req} carries no weights_tag", "backend")
        self._tag = str(tag)
        return self._tag

    @property
    def weights_tag(self) -> str:
        if self._tag is None:
            raise BackendError("external backend has no weights tag yet", "backend")
        return self._tag

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump({"kind": "external", "tag": self._tag}, f)

    def load(self, path: str | Path) -> None:
        with open(path) as f:
            meta = json.load(f)
        if meta.get("kind") != "external":
            raise BackendError(f"{path}: not external-backend state", "backend")
        self._tag = meta.get("tag")
