import math

import numpy as np
import pytest

from madnet.checkpoint import (
    BadMagicError,
    CheckpointError,
    TruncatedCheckpointError,
    VersionMismatchError,
    load_checkpoint,
    restore_trainer,
    save_checkpoint,
    save_trainer,
)
from madnet.data import Dataset, DatasetManifest, ImageBuffer, save_image
from madnet.losses import LossConfig
from madnet.model import ModelConfig, build_model
from madnet.nn import Parameter
from madnet.train import (
    REAL_FULL,
    SYNTHETIC_FULL,
    AdamState,
    Schedule,
    Trainer,
    TrainingError,
    TrainingLog,
    adam_step,
    global_grad_norm,
    lr_at,
    train,
)

TINY = ModelConfig(base_channels=4, heads_per_stage=(1, 1, 1, 1))


def scalar(value, grad):
    p = Parameter(np.array([value], dtype=np.float64))
    p.grad = None if grad is None else np.array([grad], dtype=np.float64)
    return p


def test_adam_first_step_hand_value():
    p = scalar(0.0, 1.0)
    named = [("theta", p)]
    adam_step(named, AdamState.for_params(named), 0.1)
    assert p.data[0] == pytest.approx(-0.1, rel=1e-6)


def test_adam_zero_gradient_is_fixed_point():
    named = [("a", scalar(0.7, 0.0)), ("b", scalar(-1.2, None))]
    state = AdamState.for_params(named)
    for _ in range(3):
        adam_step(named, state, 0.1)
    assert named[0][1].data[0] == 0.7 and named[1][1].data[0] == -1.2


def test_adam_symmetric_parameters_move_together():
    named = [("a", scalar(0.3, 0.5)), ("b", scalar(0.3, 0.5))]
    state = AdamState.for_params(named)
    for _ in range(4):
        adam_step(named, state, 0.01)
        for _, p in named:
            p.grad = np.array([0.5])
    assert named[0][1].data[0] == named[1][1].data[0]


def test_adam_is_gradient_scale_aware():
    def first_update(g):
        p = scalar(0.0, g)
        named = [("p", p)]
        adam_step(named, AdamState.for_params(named), 1e-3)
        return -p.data[0]

    assert abs(first_update(10.0) - first_update(1.0)) < 0.01 * first_update(1.0)
    assert abs(first_update(0.3) - first_update(3.0)) < 0.01 * first_update(3.0)


def test_adam_nan_gradient_names_parameter():
    named = [("encoder.w", scalar(0.0, math.nan))]
    with pytest.raises(TrainingError, match="encoder.w"):
        adam_step(named, AdamState.for_params(named), 0.1)


def test_adam_rejects_non_positive_lr():
    named = [("p", scalar(0.0, 1.0))]
    with pytest.raises(ValueError):
        adam_step(named, AdamState.for_params(named), 0.0)


def test_adam_clip_norm_bounds_gradient():
    named = [("a", scalar(0.0, 3.0)), ("b", scalar(0.0, 4.0))]
    assert global_grad_norm(named) == 5.0
    state = AdamState.for_params(named)
    adam_step(named, state, 0.1, clip_norm=1.0)
    np.testing.assert_allclose(state.m["a"], 0.1 * 0.6)
    np.testing.assert_allclose(state.m["b"], 0.1 * 0.8)


def test_step_half_schedule():
    assert lr_at(SYNTHETIC_FULL, 250_000) == pytest.approx(2.5e-5)
    assert lr_at(SYNTHETIC_FULL, 0) == 1e-4
    assert lr_at(SYNTHETIC_FULL, 99_999) == 1e-4
    assert lr_at(SYNTHETIC_FULL, 100_000) == 5e-5


def test_cosine_schedule():
    assert lr_at(REAL_FULL, 0) == pytest.approx(2e-4)
    assert lr_at(REAL_FULL, REAL_FULL.total) == pytest.approx(1e-6)
    assert lr_at(REAL_FULL, REAL_FULL.total // 2) == pytest.approx((2e-4 + 1e-6) / 2)
    assert lr_at(REAL_FULL, 10 * REAL_FULL.total) == 1e-6
    lrs = [lr_at(REAL_FULL, i) for i in range(0, REAL_FULL.total, 10_000)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule("linear")
    with pytest.raises(ValueError):
        Schedule(base_lr=1e-6, min_lr=1e-6)
    with pytest.raises(ValueError):
        lr_at(REAL_FULL, -1)


@pytest.fixture
def corpus(tmp_path):
    rng = np.random.default_rng(5)
    root = tmp_path / "clean"
    root.mkdir()
    for i in range(2):
        save_image(ImageBuffer(rng.random((24, 24, 3))), root / f"im{i}.png")
    return DatasetManifest(root=str(root), patch=16, seed=9)


def make_trainer(manifest, seed=0, dtype=np.float64):
    model = build_model(TINY, seed=seed, dtype=dtype)
    return Trainer(model, Dataset(manifest), LossConfig(), Schedule("cosine", 1e-3, total=10), batch=2)


def params_of(model):
    return {n: p.data.copy() for n, p in model.named_parameters()}


def test_zero_iterations_leave_model_unchanged(corpus):
    model = build_model(TINY, seed=1)
    before = params_of(model)
    log = train(model, corpus, LossConfig(), Schedule(), 0)
    assert len(log) == 0
    for n, p in model.named_parameters():
        np.testing.assert_array_equal(p.data, before[n])


def test_training_changes_model_and_logs(corpus, tmp_path):
    t = make_trainer(corpus)
    log = t.run(3, report_every=0)
    assert log.column("iter").tolist() == [0, 1, 2]
    assert np.all(np.isfinite(log.column("loss_total")))
    np.testing.assert_allclose(log.column("loss_total"), log.column("loss_charbonnier") + log.column("loss_freq"))
    assert all(p.grad is None or not np.any(p.grad) for _, p in t.model.named_parameters())
    head = t.model.heads[0].weight.data
    assert np.any(head != 0)
    log.write_csv(tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "iter,lr,loss_total,loss_charbonnier,loss_freq"


def test_identical_seeds_identical_training(corpus):
    a, b = make_trainer(corpus, seed=4), make_trainer(corpus, seed=4)
    a.run(3, report_every=0)
    b.run(3, report_every=0)
    pa, pb = params_of(a.model), params_of(b.model)
    for n in pa:
        np.testing.assert_array_equal(pa[n], pb[n])


def test_non_finite_loss_halts_with_batch_stats(corpus):
    t = make_trainer(corpus)
    t.model.heads[0].bias.data[:] = np.inf
    with pytest.raises(TrainingError, match="non-finite loss at iteration 0: noisy\\[min="):
        t.step()


def test_trainer_checks_patch_geometry(tmp_path, corpus):
    corpus.patch = 12
    with pytest.raises(ValueError, match="divisible"):
        make_trainer(corpus)


def test_training_log_container():
    log = TrainingLog()
    log.append(iter=0, lr=1.0, loss_total=2.0, loss_charbonnier=1.5, loss_freq=0.5)
    assert len(log) == 1 and log.column("lr").tolist() == [1.0]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def test_save_load_save_is_byte_identical(corpus, tmp_path):
    t = make_trainer(corpus, dtype=np.float32)
    t.run(2, report_every=0)
    first, second = tmp_path / "a.madn", tmp_path / "b.madn"
    save_trainer(first, t)
    ck = load_checkpoint(first)
    model = ck.build_model()
    save_checkpoint(second, model, ck.adam, ck.iteration, ck.seed, ck.extra)
    assert first.read_bytes() == second.read_bytes()
    raw = first.read_bytes()
    assert raw[:4] == b"MADN" and raw[4:8] == (1).to_bytes(4, "little")


def test_checkpoint_restores_everything(corpus, tmp_path):
    t = make_trainer(corpus)
    t.run(2, report_every=0)
    save_trainer(tmp_path / "c.madn", t)
    ck = load_checkpoint(tmp_path / "c.madn")
    assert ck.iteration == 2 and ck.adam.t == 2 and ck.seed == corpus.seed
    assert ck.config == TINY and ck.dtype == "float64"
    for n, p in t.model.named_parameters():
        np.testing.assert_array_equal(ck.params[n], p.data)
        np.testing.assert_array_equal(ck.adam.m[n], t.adam.m[n])
        np.testing.assert_array_equal(ck.adam.v[n], t.adam.v[n])


def test_resume_matches_uninterrupted_run(corpus, tmp_path):
    straight = make_trainer(corpus, seed=2, dtype=np.float32)
    straight.run(4, report_every=0)

    first = make_trainer(corpus, seed=2, dtype=np.float32)
    first.run(2, report_every=0)
    save_trainer(tmp_path / "mid.madn", first)
    resumed = restore_trainer(load_checkpoint(tmp_path / "mid.madn"))
    assert resumed.iteration == 2
    resumed.run(2, report_every=0)

    want, got = params_of(straight.model), params_of(resumed.model)
    for n in want:
        np.testing.assert_array_equal(got[n], want[n])


def test_bad_magic(tmp_path):
    path = tmp_path / "x.madn"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(BadMagicError, match="bad magic"):
        load_checkpoint(path)


def test_version_mismatch(tmp_path):
    model = build_model(TINY)
    path = tmp_path / "v.madn"
    save_checkpoint(path, model, AdamState.for_params(model.named_parameters()), 0, 0)
    raw = bytearray(path.read_bytes())
    raw[4:8] = (7).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatchError, match="version 7"):
        load_checkpoint(path)


@pytest.mark.parametrize("keep", [6, 20, -1])
def test_truncation(tmp_path, keep):
    model = build_model(TINY)
    path = tmp_path / "t.madn"
    save_checkpoint(path, model, AdamState.for_params(model.named_parameters()), 0, 0)
    raw = path.read_bytes()
    path.write_bytes(raw[:keep])
    with pytest.raises(TruncatedCheckpointError):
        load_checkpoint(path)


def test_trailing_bytes_rejected(tmp_path):
    model = build_model(TINY)
    path = tmp_path / "t.madn"
    save_checkpoint(path, model, AdamState.for_params(model.named_parameters()), 0, 0)
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_error_variants_are_distinct():
    kinds = {BadMagicError, VersionMismatchError, TruncatedCheckpointError}
    assert len(kinds) == 3 and all(issubclass(k, CheckpointError) for k in kinds)
