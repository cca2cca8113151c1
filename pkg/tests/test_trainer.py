import numpy as np
import pytest

from data_io import SplitSpec, SyntheticConfig, generate_synthetic, split_dataset
from events import EARLY_STOP, EPOCH_END, NEW_BEST, EventManager
from exceptions import ConfigError, DatasetError, NumericalError
from experts import ExpertLossConfig
from frontend import FrontendConfig
from fusion import FusionConfig
from gating import GatingConfig
from main import build_gradcheck_model
from metrics import macro_f1
from model import DimeModel
from save_load import read_table
from tensor_core import parameter
from trainer import (HISTORY_COLUMNS, Adam, TrainConfig, checkpoint_from_model, clip_global_norm, evaluate,
                     model_from_checkpoint, predict, train, write_history)


def small_model(d_text=12, d_visual=10, dropout_p=0.0, e_r_sigma=0.0, seed=0, d_model=8, ablate=False):
    return DimeModel(FrontendConfig(d_text_in=d_text, d_visual_in=d_visual, d_common=d_model, e_r_sigma=e_r_sigma,
                                    seed=seed),
                     FusionConfig(d_in=d_model, d_model=d_model, n_heads=2, d_ffn=2 * d_model, dropout_p=dropout_p),
                     ExpertLossConfig(), GatingConfig(d_hidden=d_model), seed=seed, ablate_alignment=ablate)


@pytest.fixture
def splits(small_dataset):
    return split_dataset(small_dataset, SplitSpec(seed=1))


def test_zero_learning_rate_keeps_parameters(splits):
    train_ds, dev_ds, _ = splits
    model = small_model()
    before = model.state_dict()
    _, history = train(model, train_ds, dev_ds, TrainConfig(lr=0.0, max_epochs=3, patience=5, batch_size=8))
    after = model.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)
    for record in history[1:]:
        for key in ('L_T', 'L_V', 'L_S', 'L_CE', 'L_total'):
            assert record.losses[key] == pytest.approx(history[0].losses[key], rel=1e-9)


def test_same_seed_gives_identical_history(splits):
    train_ds, dev_ds, _ = splits
    cfg = TrainConfig(lr=5e-3, max_epochs=3, batch_size=8, seed=4)
    runs = []
    for _ in range(2):
        _, history = train(build_gradcheck_model(seed=3), train_ds, dev_ds, cfg)
        runs.append([(r.losses, r.dev_macro_f1, r.mean_pi.tolist()) for r in history])
    assert runs[0] == runs[1]


def test_history_and_best_epoch(splits, tmp_path):
    train_ds, dev_ds, _ = splits
    model = build_gradcheck_model(seed=3)
    best, history = train(model, train_ds, dev_ds, TrainConfig(lr=1e-2, max_epochs=4, batch_size=8, patience=10))
    assert [r.epoch for r in history] == [1, 2, 3, 4]
    for record in history:
        parts = sum(record.losses[k] for k in ('L_T', 'L_V', 'L_S', 'L_CE'))
        assert record.losses['L_total'] == pytest.approx(parts, rel=1e-9)
        assert record.mean_pi.sum() == pytest.approx(1.0)
    scores = [r.dev_macro_f1 for r in history]
    assert best.epoch == int(np.argmax(scores)) + 1
    assert best.dev_macro_f1 == max(scores)
    # model po treningu ma parametry najlepszej epoki
    assert macro_f1([r.label for r in dev_ds.records], predict(model, dev_ds).labels) == best.dev_macro_f1

    path = tmp_path / 'history.tsv'
    write_history(history, path)
    rows = read_table(path)
    assert list(rows[0]) == list(HISTORY_COLUMNS)
    assert float(rows[2]['L_total']) == history[2].losses['L_total']


def test_early_stop_and_events(splits):
    train_ds, dev_ds, _ = splits
    seen = {EPOCH_END: [], NEW_BEST: [], EARLY_STOP: []}
    events = EventManager()
    for name in seen:
        events.register_listener(name, lambda name=name, **kw: seen[name].append(kw))
    _, history = train(small_model(), train_ds, dev_ds,
                       TrainConfig(lr=0.0, max_epochs=10, patience=2, batch_size=16), events)
    # lr=0 nie poprawia dev F1 po pierwszej epoce
    assert len(history) == 3
    assert len(seen[EPOCH_END]) == 3
    assert [kw['epoch'] for kw in seen[NEW_BEST]] == [1]
    assert [kw['epoch'] for kw in seen[EARLY_STOP]] == [3]


def test_non_finite_parameters_abort_with_position(splits):
    train_ds, dev_ds, _ = splits
    model = small_model()
    model.classifier.W_c.data[0, 0] = np.nan
    with pytest.raises(NumericalError) as info:
        train(model, train_ds, dev_ds, TrainConfig(max_epochs=1, batch_size=8))
    assert (info.value.epoch, info.value.batch) == (1, 0)


def test_empty_split_rejected(splits):
    train_ds, dev_ds, _ = splits
    with pytest.raises(DatasetError):
        train(small_model(), train_ds.subset([]), dev_ds, TrainConfig(max_epochs=1))


def test_evaluate_is_deterministic_and_thread_safe(small_dataset):
    model = build_gradcheck_model(seed=3)
    first = evaluate(model, small_dataset, batch_size=7)
    second = evaluate(model, small_dataset, batch_size=7)
    threaded = predict(model, small_dataset, batch_size=7, workers=4)
    assert first.to_jsonl() == second.to_jsonl()
    np.testing.assert_array_equal(predict(model, small_dataset, batch_size=7).logits, threaded.logits)
    assert threaded.ids == small_dataset.ids


def test_checkpoint_rebuilds_model(small_dataset):
    model = build_gradcheck_model(seed=3)
    ckpt = checkpoint_from_model(model, 2, 0.5, np.random.default_rng(0), TrainConfig())
    assert ckpt.configs['train']['lr'] == 1e-3
    rebuilt = model_from_checkpoint(ckpt)
    np.testing.assert_array_equal(predict(rebuilt, small_dataset).logits, predict(model, small_dataset).logits)


def test_adam_first_step_moves_by_learning_rate():
    p = parameter(np.array([1.0, -2.0]))
    p.grad = 2.0 * p.data
    Adam({'p': p}, lr=0.1).step()
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-6)


def test_adam_skips_parameters_without_gradient():
    p = parameter(np.array([3.0]))
    Adam({'p': p}, lr=0.1, weight_decay=0.5).step()
    assert p.data[0] == 3.0


def test_clip_global_norm():
    a, b = parameter(np.zeros(2)), parameter(np.zeros(1))
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_global_norm({'a': a, 'b': b}, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(np.sqrt(np.sum(a.grad ** 2) + np.sum(b.grad ** 2)), 1.0, atol=1e-9)
    assert clip_global_norm({'a': a, 'b': b}, None) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize('kwargs', [{'lr': -1.0}, {'betas': (0.9, 1.0)}, {'batch_size': 0},
                                    {'precision': 'f16'}, {'clip_norm': 0.0}, {'workers': 0}])
def test_train_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


@pytest.fixture(scope='module')
def default_run():
    """Trening w konfiguracji domyślnej na danych syntetycznych (3 klasy, cele A i B, n=100, seed 7)."""
    cache = {}

    def run(mode, ablate=False):
        if (mode, ablate) not in cache:
            ds = generate_synthetic(SyntheticConfig(dominance=mode, seed=7))
            train_ds, dev_ds, test_ds = split_dataset(ds, SplitSpec(seed=7))
            model = DimeModel(FrontendConfig(), FusionConfig(), ExpertLossConfig(), GatingConfig(), seed=7,
                              dtype=np.float32, ablate_alignment=ablate)
            _, history = train(model, train_ds, dev_ds, TrainConfig(seed=7))
            cache[(mode, ablate)] = (model, history, test_ds)
        return cache[(mode, ablate)]
    return run


@pytest.mark.slow
@pytest.mark.parametrize('mode', ['text_dominant', 'visual_dominant', 'mixed', 'shared'])
def test_total_loss_decreases_on_every_mode(default_run, mode):
    _, history, _ = default_run(mode)
    assert history[-1].losses['L_total'] < history[0].losses['L_total']
    for record in history:
        parts = sum(record.losses[k] for k in ('L_T', 'L_V', 'L_S', 'L_CE'))
        assert record.losses['L_total'] == pytest.approx(parts, rel=1e-6)


@pytest.mark.slow
def test_text_dominant_training_end_to_end(default_run):
    model, history, test_ds = default_run('text_dominant')
    assert len(history) <= 15
    report = evaluate(model, test_ds)
    assert report.avg_macro_f1 >= 0.9
    assert report.mean_gate[0] > report.mean_gate[1]


@pytest.mark.slow
def test_visual_dominant_prefers_visual_expert(default_run):
    model, _, test_ds = default_run('visual_dominant')
    report = evaluate(model, test_ds)
    assert report.mean_gate[1] > report.mean_gate[0]


@pytest.mark.slow
def test_alignment_expert_on_mixed_data(default_run):
    scores = {}
    for ablate in (False, True):
        model, _, test_ds = default_run('mixed', ablate)
        scores[ablate] = evaluate(model, test_ds.filter_meta('mode', 'shared')).pooled_macro_f1
    assert scores[False] >= scores[True]
