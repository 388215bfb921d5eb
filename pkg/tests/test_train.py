import numpy as np
import pytest

from ddir.config import RunConfig
from ddir.data import SyntheticConfig, draw_params, smooth_images, synth_generate
from ddir.encoder import EncoderConfig
from ddir.model import DdirConfig, DdirModel
from ddir.train import EpochLog, EvalRow, batch_seed, evaluate, fit, load_model, save_model

TINY = DdirConfig(EncoderConfig(3, 1), EncoderConfig(3, 1), hidden=8, def_hidden=8)


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("train")
    return synth_generate([(f"s{i}", im) for i, im in enumerate(smooth_images(2, 32, seed=1))], root,
                          SyntheticConfig(seed=2), [2.0])


def run(manifest, epochs=2, seed=0):
    model = DdirModel(TINY, seed=seed)
    logs = fit(model, manifest, epochs, batch=2, queries=32, patch=8, seed=seed, lr=1e-3, steps_per_epoch=2)
    return model, logs


def test_runs_are_reproducible(manifest):
    (a, la), (b, lb) = run(manifest), run(manifest)
    assert [x.csv_row() for x in la] == [x.csv_row() for x in lb]
    for n in a.store.names():
        assert a.store[n].data.tobytes() == b.store[n].data.tobytes()
    c, lc = run(manifest, seed=1)
    assert lc[0].csv_row() != la[0].csv_row()


def test_zero_epochs_leave_the_model_untouched(manifest):
    model = DdirModel(TINY, seed=0)
    before = model.store.state()
    assert fit(model, manifest, 0) == []
    for n, arr in model.store.state().items():
        assert arr.tobytes() == before[n].tobytes()


def test_training_lowers_the_loss(manifest):
    model = DdirModel(TINY, seed=3)
    logs = fit(model, manifest, 6, batch=2, queries=64, patch=8, lr=3e-3, steps_per_epoch=5)
    assert logs[-1].loss_total < logs[0].loss_total
    assert all(x.loss_total == pytest.approx(x.loss_sr + x.loss_def, rel=1e-6) for x in logs)


def test_log_rows():
    log = EpochLog(3, 0.5, 0.25, 0.75, 1.23456)
    assert log.csv_row() == "3,0.5,0.25,0.75,-"
    assert log.csv_row(deterministic=False) == "3,0.5,0.25,0.75,1.235"
    assert EvalRow(2.0, 5, 31.456).csv_row() == "2.0,5,31.46"
    assert EvalRow(1.5, 1, float("inf")).csv_row() == "1.5,1,inf"
    assert batch_seed(4, 9) != batch_seed(4, 10)


def test_saved_model_predicts_the_same(manifest, tmp_path):
    model, _ = run(manifest, epochs=1)
    cfg = RunConfig().with_overrides(model__channels=3, model__blocks=1, model__def_channels=3,
                                     model__def_blocks=1, model__hidden=8, model__def_hidden=8)
    assert cfg.model_config() == TINY
    path = save_model(tmp_path / "m.ddir", model, cfg)
    back, back_cfg = load_model(path)
    assert back_cfg.values == cfg.values
    a = evaluate(manifest, [2.0], "model", model)[0]
    b = evaluate(manifest, [2.0], "model", back)[0]
    assert a == b


def test_shared_shift_uses_one_offset():
    p = draw_params(SyntheticConfig(shared_shift=True, seed=5), np.random.default_rng(0))
    assert p.offset[0] == p.offset[1] == p.offset[2] and abs(p.offset[0]) <= 0.08
