import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bloomseg.backend import (
    LossReport,
    LossWeights,
    ToyBackend,
    TrainExample,
    TrainSchedule,
    combine_loss,
    lr_at,
)
from bloomseg.backend.btsr import read_tensor, write_tensor
from bloomseg.backend.toy import N_FEATURES, loss_and_grad, n_params, pixel_features
from bloomseg.errors import BackendError, DataError
from bloomseg.pseudolabel import LabelProvenance, from_mask
from bloomseg.raster import BinaryMask, Raster


# -- loss and schedule arithmetic --------------------------------------------


def test_combine_loss_endpoints():
    assert combine_loss(1, 1, 1, 7, 1.0) == 3.0
    assert combine_loss(5, 5, 5, 2, 0.0) == 2.0
    assert combine_loss(1, 1, 1, 1, 0.8) == 2.6


def test_combine_loss_validation():
    with pytest.raises(DataError):
        combine_loss(1, 1, 1, 1, 1.5)
    with pytest.raises(DataError):
        combine_loss(-1, 0, 0, 0, 0.5)
    with pytest.raises(DataError):
        LossWeights(-0.1)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 10),
    st.floats(0, 1),
)
def test_combine_loss_matches_independent_arithmetic(lc, lb, lm, ls, lam):
    got = combine_loss(lc, lb, lm, ls, lam)
    want = lam * (lc + lb + lm) + (1 - lam) * ls
    assert got == pytest.approx(want, abs=1e-12)
    report = LossReport.make(lc, lb, lm, ls, lam)
    assert report.total == got


def test_lr_schedule_paper_values():
    sched = TrainSchedule()
    assert lr_at(sched, 0) == 25e-4
    assert lr_at(sched, sched.iterations // 10) == 25e-5
    assert lr_at(sched, sched.iterations // 10 - 1) == 25e-4
    assert lr_at(sched, sched.iterations // 4) == 25e-6
    assert lr_at(sched, sched.iterations // 2) == 25e-7
    assert lr_at(sched, int(0.6 * sched.iterations)) == 25e-7


def test_lr_schedule_shape():
    sched = TrainSchedule(iterations=1000)
    rates = [lr_at(sched, i) for i in range(1000)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))  # non-increasing
    assert len(set(rates)) == 4                            # exactly 3 drops
    with pytest.raises(DataError):
        lr_at(sched, 1000)
    with pytest.raises(DataError):
        lr_at(sched, -1)
    with pytest.raises(DataError):
        TrainSchedule(decay_points=(0.5, 0.25))


# -- BTSR tensor format -------------------------------------------------------


def test_btsr_round_trip(tmp_path, rng):
    arr = rng.normal(size=(380, 676, 2)).astype(np.float32)
    write_tensor(tmp_path / "t.btsr", arr)
    back = read_tensor(tmp_path / "t.btsr")
    assert back.shape == (380, 676, 2)
    assert np.array_equal(back, arr)


def test_btsr_header_layout(tmp_path):
    arr = np.zeros((380, 676, 2), dtype=np.float32)
    write_tensor(tmp_path / "t.btsr", arr)
    blob = (tmp_path / "t.btsr").read_bytes()
    assert blob[:4] == b"BTSR"
    assert blob[4] == 1          # version
    assert blob[5] == 0          # f32 code
    assert blob[6] == 3          # ndim
    dims = np.frombuffer(blob[7:19], dtype="<u4")
    assert dims.tolist() == [380, 676, 2]
    assert len(blob) - 19 == 380 * 676 * 2 * 4


def test_btsr_malformed(tmp_path):
    path = tmp_path / "bad.btsr"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(DataError) as exc:
        read_tensor(path)
    assert "magic" in str(exc.value)

    arr = np.zeros((4, 4), dtype=np.float32)
    write_tensor(path, arr)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])  # truncate payload
    with pytest.raises(DataError) as exc:
        read_tensor(path)
    assert "dimension mismatch" in str(exc.value)


# -- toy backend --------------------------------------------------------------


def _separable_examples(rng, n=6, size=24):
    """Flowers are reddish, background greenish; linearly separable."""
    out = []
    for i in range(n):
        img = np.empty((size, size, 3))
        img[:, :] = (0.2, 0.6, 0.2)
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(3):
            cy, cx = rng.integers(4, size - 4, 2)
            yy, xx = np.mgrid[0:size, 0:size]
            blob = (yy - cy) ** 2 + (xx - cx) ** 2 <= 9
            img[blob] = (0.8, 0.25, 0.3)
            mask |= blob
        img += rng.normal(0, 0.02, img.shape)
        raster = Raster(np.clip(img, 0, 1))
        label = from_mask(BinaryMask(mask), LabelProvenance(f"s{i}", 0, 0, 0))
        out.append(TrainExample(raster, label))
    return out


def test_predict_shape_contract(rng):
    backend = ToyBackend()
    examples = _separable_examples(rng, n=2)
    backend.train(examples, TrainSchedule(iterations=50, batch_size=64), LossWeights(), 0)
    logits = backend.predict_logits(Raster(rng.random((13, 17, 3))))
    assert logits.size == (13, 17)
    assert logits.planes.shape == (13, 17, 2)
    assert logits.kind == "logits"


def test_predict_before_training():
    with pytest.raises(BackendError):
        ToyBackend().predict_logits(Raster(np.zeros((4, 4, 3))))


def test_training_reaches_accuracy_on_separable_data(rng):
    backend = ToyBackend()
    examples = _separable_examples(rng)
    backend.train(
        examples, TrainSchedule(iterations=2000, batch_size=256), LossWeights(), seed=5
    )
    correct = total = 0
    for ex in _separable_examples(np.random.default_rng(777)):
        pred = backend.predict_logits(ex.image)
        cls = pred.planes.argmax(axis=2).astype(bool)
        correct += (cls == ex.label.semantic.bits).sum()
        total += cls.size
    assert correct / total >= 0.95
    report = backend.last_loss()
    assert report.lc == report.lb == report.lm == 0.0
    assert report.total == combine_loss(0, 0, 0, report.ls, 0.8)


@pytest.mark.parametrize("hidden", [0, 6])
def test_gradient_matches_finite_differences(rng, hidden):
    x = rng.normal(size=(40, N_FEATURES))
    y = (rng.random(40) < 0.5).astype(np.int64)
    flat = rng.normal(0, 0.5, n_params(hidden))
    _, grad = loss_and_grad(flat, x, y, hidden)
    eps = 1e-6
    coords = rng.choice(flat.size, size=10, replace=False)
    for c in coords:
        up = flat.copy()
        up[c] += eps
        down = flat.copy()
        down[c] -= eps
        fd = (loss_and_grad(up, x, y, hidden)[0] - loss_and_grad(down, x, y, hidden)[0]) / (2 * eps)
        denom = max(abs(fd), abs(grad[c]), 1e-8)
        assert abs(fd - grad[c]) / denom <= 1e-4


def test_training_deterministic(rng):
    examples = _separable_examples(rng, n=2)
    tags = []
    for _ in range(2):
        backend = ToyBackend()
        tags.append(
            backend.train(
                examples, TrainSchedule(iterations=200, batch_size=64), LossWeights(), 9
            )
        )
    assert tags[0] == tags[1]


def test_argmax_invariant_under_positive_scaling(rng):
    backend = ToyBackend()
    backend.train(
        _separable_examples(rng, n=2),
        TrainSchedule(iterations=100, batch_size=64),
        LossWeights(),
        0,
    )
    patch = Raster(rng.random((9, 9, 3)))
    logits = backend.predict_logits(patch).planes
    assert np.array_equal(logits.argmax(axis=2), (logits * 7.3).argmax(axis=2))


def test_save_load_round_trip(tmp_path, rng):
    backend = ToyBackend()
    backend.train(
        _separable_examples(rng, n=2),
        TrainSchedule(iterations=100, batch_size=64),
        LossWeights(),
        0,
    )
    backend.save(tmp_path / "w.btsr")
    other = ToyBackend()
    other.load(tmp_path / "w.btsr")
    assert other.weights_tag == backend.weights_tag
    patch = Raster(rng.random((8, 8, 3)))
    a = backend.predict_logits(patch).planes
    b = other.predict_logits(patch).planes
    assert np.allclose(a, b, atol=1e-6)


def test_pixel_features_shape_and_range(rng):
    feats = pixel_features(Raster(rng.random((10, 12, 3))))
    assert feats.shape == (10, 12, N_FEATURES)
    assert feats[:, :, 7].min() == 0.0 and feats[:, :, 7].max() == 1.0  # x coord
    gray = pixel_features(Raster(rng.random((5, 5, 1))))
    assert gray.shape == (5, 5, N_FEATURES)
