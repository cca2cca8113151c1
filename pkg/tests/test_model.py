import copy

import numpy as np
import pytest

from exceptions import CheckpointError, ConfigError, DimensionError
from experts import ExpertLossConfig
from frontend import FrontendConfig
from fusion import FusionConfig
from gating import GatingConfig, gate, gate_logits
from main import build_gradcheck_model, random_batch, run_gradcheck
from model import PARAMETER_GROUPS, DimeModel


def test_parameter_groups_cover_all_parameters(tiny_model):
    groups = tiny_model.parameter_groups()
    assert tuple(groups) == PARAMETER_GROUPS
    flat = [name for names in groups.values() for name in names]
    assert flat == list(tiny_model.named_parameters())
    assert tiny_model.num_parameters() == sum(t.data.size for t in tiny_model.named_parameters().values())


def test_same_seed_gives_same_weights():
    a = build_gradcheck_model(seed=4).state_dict()
    b = build_gradcheck_model(seed=4).state_dict()
    c = build_gradcheck_model(seed=5).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a['gating.W1'], c['gating.W1'])


def test_mismatched_fusion_input_rejected():
    with pytest.raises(ConfigError):
        DimeModel(FrontendConfig(d_text_in=4, d_visual_in=4, d_common=6), FusionConfig(d_in=8, d_model=8, n_heads=2),
                  ExpertLossConfig(), GatingConfig(d_hidden=4))


def test_forward_trace_shapes_and_invariants(tiny_model, tiny_batch):
    trace = tiny_model.loss(tiny_batch, training=False)
    n, dc, dm = 2, tiny_model.frontend_config.d_common, tiny_model.fusion_config.d_model
    for name in ('e_p', 'e_t', 'e_v', 'e_r'):
        vec = getattr(trace, name).data
        assert vec.shape == (n, dc)
        np.testing.assert_allclose(np.linalg.norm(vec, axis=-1), 1.0, atol=1e-6)
    for name in ('E_t', 'E_v', 'E_tv', 'h'):
        assert getattr(trace, name).shape == (n, dm)
    assert trace.gate_logits.shape == (n, 3)
    np.testing.assert_allclose(trace.pi.data.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(trace.probs.data.sum(axis=-1), 1.0, atol=1e-12)
    losses = trace.losses()
    assert losses['L_total'] == pytest.approx(losses['L_T'] + losses['L_V'] + losses['L_S'] + losses['L_CE'])
    assert 0.0 <= losses['L_S'] <= 4.0


def test_eval_forward_is_deterministic(tiny_model, tiny_batch):
    a = tiny_model.forward(tiny_batch, training=False).logits.data
    b = tiny_model.forward(tiny_batch, training=False).logits.data
    np.testing.assert_array_equal(a, b)


def test_ablated_model_uses_two_experts(tiny_batch):
    model = build_gradcheck_model(seed=3, ablate_alignment=True)
    trace = model.loss(tiny_batch, training=False)
    assert model.n_experts == 2
    assert trace.pi.shape == (2, 2)
    assert trace.L_S.item() == 0.0
    losses = trace.losses()
    assert losses['L_total'] == pytest.approx(losses['L_T'] + losses['L_V'] + losses['L_CE'])


@pytest.mark.parametrize('ablate', [False, True])
def test_trace_gate_matches_gating_module(tiny_batch, ablate):
    model = build_gradcheck_model(seed=3, ablate_alignment=ablate)
    trace = model.forward(tiny_batch, training=False)
    expected = gate(model.gating, trace.e_t, trace.e_v, model.n_experts)
    np.testing.assert_array_equal(trace.pi.data, expected.data)
    np.testing.assert_array_equal(trace.gate_logits.data, gate_logits(model.gating, trace.e_t, trace.e_v).data)
    assert trace.gate_logits.shape == (2, 3)


def test_state_dict_round_trip(tiny_model, tiny_batch):
    state = tiny_model.state_dict()
    other = build_gradcheck_model(seed=11)
    other.load_state_dict(state)
    np.testing.assert_array_equal(tiny_model.forward(tiny_batch).logits.data, other.forward(tiny_batch).logits.data)
    # state_dict zwraca kopie
    state['classifier.b_c'][...] = 100.0
    assert not np.any(tiny_model.classifier.b_c.data == 100.0)


def test_load_state_dict_validates_before_copying(tiny_model):
    before = tiny_model.state_dict()
    broken = copy.deepcopy(before)
    broken['gating.W2'] = np.zeros((3, 1))
    broken['frontend.W_text'] = np.zeros_like(broken['frontend.W_text'])
    with pytest.raises(DimensionError):
        tiny_model.load_state_dict(broken)
    np.testing.assert_array_equal(tiny_model.frontend.W_text.data, before['frontend.W_text'])
    del broken['gating.W2']
    with pytest.raises(CheckpointError):
        tiny_model.load_state_dict(broken)


def test_configs_rebuild_identical_model(tiny_model, tiny_batch):
    rebuilt = DimeModel.from_configs(tiny_model.configs())
    np.testing.assert_array_equal(rebuilt.forward(tiny_batch).logits.data,
                                  tiny_model.forward(tiny_batch).logits.data)
    assert tiny_model.configs()['model']['precision'] == 'f64'


def test_float32_model_runs(tiny_batch):
    configs = build_gradcheck_model(seed=3).configs()
    configs['model']['precision'] = 'f32'
    model = DimeModel.from_configs(configs)
    trace = model.loss(tiny_batch)
    assert trace.logits.dtype == np.float32
    assert np.isfinite(trace.L_total.item())


def test_gradients_sampled(tiny_model, tiny_batch):
    report = run_gradcheck(tiny_model, tiny_batch, tol=1e-4, max_elements=12)
    assert report.passed, report.failing()
    assert set(report.group_errors(tiny_model.parameter_groups())) == set(PARAMETER_GROUPS)


@pytest.mark.slow
@pytest.mark.parametrize('ablate', [False, True])
def test_full_gradient_check_every_group(ablate):
    model = build_gradcheck_model(seed=1, ablate_alignment=ablate)
    report = run_gradcheck(model, random_batch(model, 2, 1), tol=1e-4)
    errors = report.group_errors(model.parameter_groups())
    assert all(err < 1e-4 for err in errors.values()), errors
