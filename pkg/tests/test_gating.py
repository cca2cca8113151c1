import numpy as np
import pytest

from exceptions import ConfigError, DimensionError, InputError
from experts import ExpertOutputs
from gating import (ClassifierParams, ForwardTrace, GatingConfig, GatingParams, classify, fuse_experts, gate,
                    gate_logits, total_loss)
from tensor_core import Tensor, parameter


@pytest.fixture
def gating(rng):
    return GatingParams.init(GatingConfig(d_hidden=6), d_common=4, rng=rng)


def _inputs(rng, n=5, d=4):
    return Tensor(rng.standard_normal((n, d))), Tensor(rng.standard_normal((n, d)))


def _experts(h_t, h_v, h_tv):
    zero = Tensor(0.0)
    return ExpertOutputs(Tensor(h_t), Tensor(h_v), Tensor(h_tv), zero, zero, zero)


def test_zero_output_layer_gives_uniform_weights(gating, rng):
    gating.W2.data[...] = 0.0
    gating.b2.data[...] = 0.0
    pi = gate(gating, *_inputs(rng))
    np.testing.assert_allclose(pi.data, 1.0 / 3.0, atol=1e-12)


def test_low_temperature_approaches_one_hot(rng):
    params = GatingParams(parameter(rng.standard_normal((6, 8))), parameter(np.zeros(6)),
                          parameter(np.zeros((3, 6))), parameter(np.array([1.0, 0.0, 0.0])), tau=0.01)
    pi = gate(params, *_inputs(rng, n=2))
    assert np.all(pi.data[:, 0] > 0.999)


@pytest.mark.parametrize('tau', [0.05, 0.5, 1.0, 4.0])
def test_temperature_keeps_argmax(gating, rng, tau):
    e_t, e_v = _inputs(rng)
    logits = gate_logits(gating, e_t, e_v).data
    gating.tau = tau
    pi = gate(gating, e_t, e_v).data
    np.testing.assert_array_equal(pi.argmax(axis=-1), logits.argmax(axis=-1))
    np.testing.assert_allclose(pi.sum(axis=-1), 1.0, atol=1e-12)


def test_two_expert_gate_uses_first_two_logits(gating, rng):
    e_t, e_v = _inputs(rng)
    logits = gate_logits(gating, e_t, e_v).data[:, :2]
    pi = gate(gating, e_t, e_v, n_experts=2).data
    expected = np.exp(logits) / np.exp(logits).sum(axis=-1, keepdims=True)
    assert pi.shape == (5, 2)
    np.testing.assert_allclose(pi, expected, atol=1e-12)
    with pytest.raises(ConfigError):
        gate(gating, e_t, e_v, n_experts=4)


def test_gate_dimension_mismatch(gating, rng):
    with pytest.raises(DimensionError):
        gate(gating, *_inputs(rng, d=3))


def test_invalid_temperature():
    with pytest.raises(ConfigError):
        GatingConfig(tau=0.0)
    with pytest.raises(ConfigError):
        GatingParams(parameter(np.zeros((2, 2))), parameter(np.zeros(2)),
                     parameter(np.zeros((3, 2))), parameter(np.zeros(3)), tau=-1.0)


def test_one_hot_selects_textual_expert(rng):
    h_t, h_v, h_tv = (rng.standard_normal((2, 3)) for _ in range(3))
    pi = Tensor(np.array([[1.0, 0.0, 0.0]] * 2))
    np.testing.assert_array_equal(fuse_experts(pi, _experts(h_t, h_v, h_tv)).data, h_t)


def test_equal_experts_are_a_fixed_point(rng):
    u = rng.standard_normal((3, 4))
    raw = rng.random((3, 3))
    pi = Tensor(raw / raw.sum(axis=-1, keepdims=True))
    np.testing.assert_allclose(fuse_experts(pi, _experts(u, u, u)).data, u, atol=1e-12)


def test_fused_vector_is_convex_combination(rng):
    h = [rng.standard_normal((4, 5)) for _ in range(3)]
    raw = rng.random((4, 3))
    fused = fuse_experts(Tensor(raw / raw.sum(axis=-1, keepdims=True)), _experts(*h)).data
    stacked = np.stack(h)
    assert np.all(fused >= stacked.min(axis=0) - 1e-12)
    assert np.all(fused <= stacked.max(axis=0) + 1e-12)


def test_two_expert_fusion_ignores_alignment(rng):
    h_t, h_v, h_tv = (rng.standard_normal((1, 3)) for _ in range(3))
    fused = fuse_experts(Tensor(np.array([[0.25, 0.75]])), _experts(h_t, h_v, h_tv)).data
    np.testing.assert_allclose(fused, 0.25 * h_t + 0.75 * h_v, atol=1e-12)


def test_unnormalized_weights_rejected(rng):
    with pytest.raises(InputError):
        fuse_experts(Tensor(np.array([[0.5, 0.5, 0.5]])), _experts(*(np.ones((1, 2)) for _ in range(3))))


def test_zero_classifier_is_uniform(rng):
    params = ClassifierParams(parameter(np.zeros((3, 4))), parameter(np.zeros(3)))
    logits, probs = classify(params, Tensor(rng.standard_normal((2, 4))))
    np.testing.assert_array_equal(logits.data, 0.0)
    np.testing.assert_allclose(probs.data, 1.0 / 3.0, atol=1e-12)
    with pytest.raises(DimensionError):
        classify(params, Tensor(np.zeros((2, 5))))


def _trace(l_t, l_v, l_s, l_ce=None):
    dummy = Tensor(np.zeros((1, 3)))
    return ForwardTrace(e_p=dummy, e_t=dummy, e_v=dummy, e_r=dummy, E_t=dummy, E_v=dummy, E_tv=dummy,
                        gate_logits=dummy, pi=dummy, h=dummy, logits=dummy, probs=dummy,
                        L_T=Tensor(l_t), L_V=Tensor(l_v), L_S=Tensor(l_s),
                        L_CE=None if l_ce is None else Tensor(l_ce))


def test_total_loss_is_unweighted_sum():
    trace = _trace(0.5, 0.3, 0.1, 1.1)
    assert total_loss(trace).item() == pytest.approx(2.0, abs=1e-12)
    assert trace.losses()['L_total'] == pytest.approx(2.0, abs=1e-12)
    assert total_loss(_trace(0.0, 0.0, 0.0, 0.0)).item() == 0.0


def test_total_loss_computes_cross_entropy_from_labels():
    trace = _trace(0.0, 0.0, 0.0)
    assert total_loss(trace, labels=[1]).item() == pytest.approx(np.log(3.0), abs=1e-12)
    with pytest.raises(InputError):
        total_loss(_trace(0.0, 0.0, 0.0))
