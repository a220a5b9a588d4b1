import json

import numpy as np
import pytest

from bloomseg import ssl
from bloomseg.backend import ToyBackend, TrainSchedule
from bloomseg.backend.base import Backend
from bloomseg.data import MemorySample
from bloomseg.errors import BackendError, DataError
from bloomseg.pseudolabel import read_labels
from bloomseg.raster import BinaryMask, Raster, ScoreMap
from bloomseg.rgr import RgrParams

TINY_SCHEDULE = TrainSchedule(iterations=60, batch_size=64, base_lr=2.0)


def tiny_config(**overrides):
    base = dict(
        window_factor=1,
        rotations=1,
        max_iter=2,
        seed=3,
        rgr_params=RgrParams(spacing=4, num_runs=4, hi_bg=0.05),
        schedule=TINY_SCHEDULE,
        variant="ssl-rgr",
    )
    base.update(overrides)
    return ssl.SslConfig(**base)


def make_samples(rng, n=2, size=12, labeled=True):
    out = []
    for i in range(n):
        img = np.full((size, size, 3), (0.2, 0.5, 0.2))
        mask = np.zeros((size, size), dtype=bool)
        cy, cx = rng.integers(3, size - 3, 2)
        yy, xx = np.mgrid[0:size, 0:size]
        blob = (yy - cy) ** 2 + (xx - cx) ** 2 <= 6
        img[blob] = (0.9, 0.2, 0.3)
        mask |= blob
        img = np.clip(img + rng.normal(0, 0.01, img.shape), 0, 1)
        out.append(
            MemorySample(f"t{i}", Raster(img), BinaryMask(mask) if labeled else None)
        )
    return out


class ThresholdBackend(Backend):
    """Deterministic stub: confident flower logit where red dominates."""

    def __init__(self, scale=12.0):
        self.scale = scale
        self.trained = False
        self.predict_calls = 0

    def predict_logits(self, patch):
        self.predict_calls += 1
        red = patch.data[:, :, 0] > 0.5
        z = np.where(red, self.scale, -self.scale)
        return ScoreMap.from_logits(np.stack([-z, z], axis=2))

    def train(self, examples, schedule, weights, seed):
        self.trained = True
        return self.weights_tag

    @property
    def weights_tag(self):
        return "stub-0001"

    def save(self, path):
        from bloomseg.backend import btsr

        btsr.write_tensor(path, np.array([self.scale], dtype=np.float32))
        with open(str(path) + ".json", "w") as f:
            json.dump({"kind": "stub"}, f)

    def load(self, path):
        pass

    def last_loss(self):
        from bloomseg.backend.base import LossReport

        return LossReport.make(0, 0, 0, 0.0, 0.8)


# -- config snapshot ----------------------------------------------------------


def test_config_round_trips_through_json():
    for config in (
        tiny_config(),
        tiny_config(variant="ssl", tau_seg=0.35, jobs=4, retrain_from="initial"),
        tiny_config(rotations=20, labeled_dataset="/x/y", min_instance_area=3),
    ):
        blob = json.dumps(config.to_json())
        assert ssl.SslConfig.from_json(json.loads(blob)) == config


def test_config_validation():
    with pytest.raises(DataError):
        tiny_config(variant="nope")
    with pytest.raises(DataError):
        tiny_config(retrain_from="scratch")
    with pytest.raises(DataError):
        tiny_config(max_iter=-1)


# -- threshold selection ------------------------------------------------------


def test_select_threshold_spec_example():
    curve = [(0.3, 80.0, 90.0), (0.5, 90.0, 85.0), (0.7, 95.0, 60.0)]
    assert ssl.select_threshold(curve) == 0.5


def test_select_threshold_single_point_and_ties():
    assert ssl.select_threshold([(0.4, 70.0, 70.0)]) == 0.4
    tied = [(0.3, 80.0, 80.0), (0.6, 80.0, 80.0)]
    assert ssl.select_threshold(tied) == 0.6


def test_select_threshold_skips_degenerate():
    curve = [(0.3, 0.0, 0.0), (0.5, 60.0, 60.0)]
    assert ssl.select_threshold(curve) == 0.5
    with pytest.raises(DataError):
        ssl.select_threshold([(0.3, 0.0, 0.0)])
    with pytest.raises(DataError):
        ssl.select_threshold([])


def test_select_threshold_matches_bruteforce(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        curve = [
            (float(t), float(p), float(r))
            for t, p, r in zip(
                np.sort(rng.random(n)), 100 * rng.random(n), 100 * rng.random(n)
            )
        ]
        rows = [(t, p, r, 2 * p * r / (p + r)) for t, p, r in curve if p + r > 0]
        if not rows:
            continue
        best_f1 = max(f for *_, f in rows)
        want = max(t for t, p, r, f in rows if f == best_f1)
        assert ssl.select_threshold(curve) == want


# -- supervised initialization ------------------------------------------------


def test_init_supervised_smallest_run(tmp_path, rng):
    samples = make_samples(rng, n=1, size=8)
    state, backend = ssl.init_supervised(samples, tiny_config(), tmp_path / "run")
    assert state.iteration == 0
    assert state.weights_tag == backend.weights_tag
    assert (tmp_path / "run" / "iter-0" / "weights.btsr").exists()
    assert (tmp_path / "run" / "iter-0" / "config.json").exists()
    snap = json.loads((tmp_path / "run" / "iter-0" / "config.json").read_text())
    assert ssl.SslConfig.from_json(snap) == state.config


def test_init_supervised_deterministic(tmp_path, rng):
    samples = make_samples(np.random.default_rng(0), n=2)
    s1, _ = ssl.init_supervised(samples, tiny_config(), tmp_path / "r1")
    s2, _ = ssl.init_supervised(samples, tiny_config(), tmp_path / "r2")
    assert s1.weights_tag == s2.weights_tag
    w1 = (tmp_path / "r1" / "iter-0" / "weights.btsr").read_bytes()
    w2 = (tmp_path / "r2" / "iter-0" / "weights.btsr").read_bytes()
    assert w1 == w2


def test_init_supervised_needs_samples(tmp_path):
    with pytest.raises(DataError):
        ssl.init_supervised([], tiny_config(), tmp_path / "run")


# -- ssl iteration ------------------------------------------------------------


def test_iterate_respects_max_iter(tmp_path, rng):
    samples = make_samples(rng)
    state, backend = ssl.init_supervised(samples, tiny_config(max_iter=0), tmp_path / "run")
    with pytest.raises(DataError):
        ssl.ssl_iterate(state, backend, make_samples(rng, labeled=False))
    assert state.iteration == 0
    assert not (tmp_path / "run" / "iter-1").exists()


def test_iterate_produces_labels_and_metrics(tmp_path, rng):
    samples = make_samples(rng)
    unlabeled = make_samples(np.random.default_rng(5), n=2, labeled=False)
    state, backend = ssl.init_supervised(samples, tiny_config(), tmp_path / "run")
    new = ssl.ssl_iterate(state, backend, unlabeled)
    assert new.iteration == 1
    labels = read_labels(new.label_dir)
    assert labels
    # lineage: every provenance names a real (sample, window, rotation, r)
    ids = {s.sample_id for s in unlabeled}
    for lb in labels:
        assert lb.provenance.sample_id in ids
        assert 0 <= lb.provenance.window < (2 * new.config.window_factor - 1) ** 2
        assert 0 <= lb.provenance.rotation < new.config.rotations
        assert lb.provenance.iteration == 1
    metrics = json.loads((tmp_path / "run" / "iter-1" / "metrics.json").read_text())
    assert metrics["pseudo_labels"] == len(labels)


def test_failed_iteration_rolls_back(tmp_path, rng):
    samples = make_samples(rng)
    state, backend = ssl.init_supervised(samples, tiny_config(), tmp_path / "run")

    class FailingBackend(ToyBackend):
        def train(self, *a, **k):
            raise BackendError("boom", "backend")

    bad = FailingBackend()
    bad._flat = backend._flat
    with pytest.raises(BackendError):
        ssl.ssl_iterate(state, bad, make_samples(rng, labeled=False))
    assert not (tmp_path / "run" / "iter-1").exists()
    assert not list((tmp_path / "run").glob(".staging*"))


def test_variant_ssl_equals_rgr_when_fully_confident(tmp_path, rng):
    unlabeled = make_samples(np.random.default_rng(11), n=1, labeled=False)
    masks = {}
    for variant in ("ssl", "ssl-rgr"):
        config = tiny_config(variant=variant, tau_seg=0.5, rotations=2)
        backend = ThresholdBackend()
        state, _ = ssl.init_supervised(
            make_samples(np.random.default_rng(0)), config, tmp_path / variant, backend
        )
        new = ssl.ssl_iterate(state, backend, unlabeled)
        masks[variant] = {
            (lb.provenance.sample_id, lb.provenance.window, lb.provenance.rotation):
                lb.semantic.bits
            for lb in read_labels(new.label_dir)
        }
    assert masks["ssl"].keys() == masks["ssl-rgr"].keys()
    for key in masks["ssl"]:
        assert np.array_equal(masks["ssl"][key], masks["ssl-rgr"][key]), key


def test_rerun_from_saved_state_is_bit_identical(tmp_path, rng):
    samples = make_samples(rng)
    unlabeled = make_samples(np.random.default_rng(5), n=2, labeled=False)
    config = tiny_config()
    state, backend = ssl.init_supervised(samples, config, tmp_path / "run")
    first = ssl.ssl_iterate(state, backend, unlabeled)
    files = sorted(p.relative_to(first.label_dir) for p in first.label_dir.rglob("*") if p.is_file())
    blobs = {str(p): (first.label_dir / p).read_bytes() for p in files}

    # reload iter-0 from disk and redo the iteration
    state2, backend2 = ssl.load_state(tmp_path / "run", iteration=0)
    assert state2.weights_tag == state.weights_tag
    second = ssl.ssl_iterate(state2, backend2, unlabeled)
    files2 = sorted(p.relative_to(second.label_dir) for p in second.label_dir.rglob("*") if p.is_file())
    assert files == files2
    for p in files2:
        assert (second.label_dir / p).read_bytes() == blobs[str(p)], p


# -- inference ----------------------------------------------------------------


def test_infer_k1_is_single_patch_threshold(tmp_path, rng):
    backend = ThresholdBackend()
    state, _ = ssl.init_supervised(
        make_samples(rng, n=1), tiny_config(), tmp_path / "run", backend
    )
    sample = make_samples(np.random.default_rng(8), n=1)[0]
    probs, mask = ssl.infer(state, backend, sample.image_data)
    red = sample.image_data.data[:, :, 0] > 0.5
    assert np.array_equal(mask.bits, red)


def test_infer_counts_backend_calls(tmp_path, rng):
    samples = make_samples(rng, size=16)
    unlabeled = make_samples(np.random.default_rng(5), n=1, size=16, labeled=False)
    config = tiny_config(window_factor=2, rotations=2)
    backend = ToyBackend()
    state, backend = ssl.init_supervised(samples, config, tmp_path / "run", backend)
    image = samples[0].image_data
    expected = (2 * config.window_factor - 1) ** 2
    for r in range(config.max_iter + 1):
        calls = {"n": 0}
        orig = backend.predict_logits

        def counting(patch, _orig=orig, _calls=calls):
            _calls["n"] += 1
            return _orig(patch)

        backend.predict_logits = counting
        ssl.infer(state, backend, image)
        backend.predict_logits = orig
        assert calls["n"] == expected, f"iteration {r}"
        if r < config.max_iter:
            state = ssl.ssl_iterate(state, backend, unlabeled)


def test_infer_untrained_state_fails(tmp_path):
    backend = ToyBackend()
    state = ssl.SslState(tmp_path, 0, "none", 0.5, tiny_config())
    with pytest.raises(BackendError):
        ssl.infer(state, backend, Raster(np.zeros((8, 8, 3))))


def test_infer_pp_identical_on_confident_map(tmp_path, rng):
    backend = ThresholdBackend(scale=25.0)
    state, _ = ssl.init_supervised(
        make_samples(rng, n=1), tiny_config(), tmp_path / "run", backend
    )
    image = make_samples(np.random.default_rng(4), n=1)[0].image_data
    _, plain = ssl.infer(state, backend, image, pp=False)
    _, post = ssl.infer(state, backend, image, pp=True)
    assert np.array_equal(plain.bits, post.bits)


def test_load_state_roundtrip(tmp_path, rng):
    samples = make_samples(rng)
    state, _ = ssl.init_supervised(samples, tiny_config(), tmp_path / "run")
    loaded, backend = ssl.load_state(tmp_path / "run")
    assert loaded.iteration == 0
    assert loaded.weights_tag == state.weights_tag
    assert loaded.config == state.config
    with pytest.raises(DataError):
        ssl.load_state(tmp_path / "empty")
    with pytest.raises(DataError):
        ssl.load_state(tmp_path / "run", iteration=7)


def test_tau_from_labeled(tmp_path, rng):
    samples = make_samples(rng, n=2, size=16)
    config = tiny_config(variant="ssl", tau_seg=None)
    state, backend = ssl.init_supervised(samples, config, tmp_path / "run")
    tau = ssl.tau_from_labeled(state, backend, samples)
    assert 0.0 <= tau <= 1.0


def test_infer_rejects_trained_against_color(tmp_path, rng):
    # a backend trained on red-vs-green marks an all-green image empty
    samples = make_samples(rng, n=2, size=16)
    state, backend = ssl.init_supervised(samples, tiny_config(), tmp_path / "run")
    green = Raster(np.full((16, 16, 3), (0.2, 0.5, 0.2)))
    _, mask = ssl.infer(state, backend, green)
    assert not mask.bits.any()


def test_parallel_jobs_bit_identical(tmp_path, rng):
    samples = make_samples(rng)
    unlabeled = make_samples(np.random.default_rng(5), n=3, labeled=False)
    outs = {}
    for jobs in (1, 3):
        config = tiny_config(jobs=jobs)
        state, backend = ssl.init_supervised(samples, config, tmp_path / f"run-{jobs}")
        new = ssl.ssl_iterate(state, backend, unlabeled)
        outs[jobs] = {
            str(p.relative_to(new.label_dir)): p.read_bytes()
            for p in new.label_dir.rglob("*") if p.is_file()
        }
    assert outs[1] == outs[3]
