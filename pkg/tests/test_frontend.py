import numpy as np
import pytest

from data_io import Batch
from exceptions import ConfigError, DimensionError
from frontend import FrontendConfig, FrontendParams, project
from tensor_core import Tensor, backward, check_gradients, parameter


def _batch(rng, n, d_text, d_visual):
    return Batch(ids=[f"r{i}" for i in range(n)], targets=['A'] * n, labels=np.zeros(n, dtype=np.int64),
                 e_text=rng.standard_normal((n, d_text)), e_visual=rng.standard_normal((n, d_visual)),
                 e_prompt=rng.standard_normal((n, d_text)))


@pytest.fixture
def config():
    return FrontendConfig(d_text_in=6, d_visual_in=5, d_common=4, seed=2)


@pytest.fixture
def params(config, rng):
    return FrontendParams.init(config, rng)


def test_identity_projection_keeps_unit_input():
    config = FrontendConfig(d_text_in=3, d_visual_in=3, d_common=3)
    eye = np.eye(3)
    params = FrontendParams(parameter(eye), parameter(np.zeros(3)), parameter(eye), parameter(np.zeros(3)),
                            parameter(eye), parameter(np.zeros(3)), np.ones(3))
    unit = np.array([[0.0, 0.6, 0.8]])
    batch = Batch(['r'], ['A'], np.zeros(1, dtype=np.int64), unit, unit, unit)
    out = project(params, config, batch, training=False)
    for vec in (out.e_t, out.e_v, out.e_p):
        np.testing.assert_allclose(vec.data, unit, atol=1e-12)


@pytest.mark.parametrize('training', [False, True])
def test_all_outputs_unit_norm(config, params, rng, training):
    out = project(params, config, _batch(rng, 5, 6, 5), training=training, rng=rng)
    for vec in out:
        np.testing.assert_allclose(np.linalg.norm(vec.data, axis=-1), 1.0, atol=1e-6)


def test_visual_prompt_policy(config, params, rng):
    batch = _batch(rng, 3, 6, 5)
    first = project(params, config, batch, training=True, rng=np.random.default_rng(7)).e_r.data
    second = project(params, config, batch, training=True, rng=np.random.default_rng(7)).e_r.data
    np.testing.assert_array_equal(first, second)
    evals = [project(params, config, batch, training=False).e_r.data for _ in range(2)]
    expected = params.e_r_eval / np.linalg.norm(params.e_r_eval)
    for e_r in evals:
        np.testing.assert_allclose(e_r, np.tile(expected, (3, 1)), atol=1e-12)


def test_e_r_eval_is_seed_derived(config, rng):
    a = FrontendParams.init(config, np.random.default_rng(1))
    b = FrontendParams.init(config, np.random.default_rng(99))
    np.testing.assert_array_equal(a.e_r_eval, b.e_r_eval)


def test_eval_forward_is_pure(config, params, rng):
    batch = _batch(rng, 2, 6, 5)
    a = project(params, config, batch, training=False)
    b = project(params, config, batch, training=False)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.data, y.data)


def test_dimension_mismatch_names_field(config, params, rng):
    batch = _batch(rng, 2, 6, 7)
    with pytest.raises(DimensionError, match='e_visual'):
        project(params, config, batch, training=False)


def test_gradients_reach_projections_but_not_e_r(config, params, rng):
    batch = _batch(rng, 2, 6, 5)
    weights = [Tensor(rng.standard_normal((2, 4))) for _ in range(4)]

    def build():
        out = project(params, config, batch, training=True, rng=np.random.default_rng(0))
        total = None
        for vec, w in zip(out, weights):
            term = (vec * w).sum()
            total = term if total is None else total + term
        return total

    report = check_gradients(build, params.named_parameters())
    assert report.passed
    out = project(params, config, batch, training=True, rng=np.random.default_rng(0))
    assert not out.e_r.requires_grad
    backward((out.e_t * weights[0]).sum())
    assert params.W_text.grad is not None and np.any(params.W_text.grad != 0)


def test_config_validation():
    with pytest.raises(ConfigError):
        FrontendConfig(d_common=0)
    with pytest.raises(ConfigError):
        FrontendConfig(eps_norm=0.0)
    with pytest.raises(ConfigError):
        FrontendConfig(e_r_policy='per_epoch')
