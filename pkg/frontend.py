# frontend.py
import math
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional

import numpy as np

from data_io import Batch
from exceptions import ConfigError, DimensionError, UsageError
from tensor_core import Tensor, l2_normalize, linear, parameter

logger = logging.getLogger(__name__)

E_R_POLICIES = ('resample_train_fixed_eval',)


@dataclass
class FrontendConfig:
    d_text_in: int = 768
    d_visual_in: int = 512
    d_common: int = 512
    eps_norm: float = 1e-12
    e_r_policy: str = 'resample_train_fixed_eval'
    e_r_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.d_text_in, self.d_visual_in, self.d_common) < 1:
            raise ConfigError("Wymiary frontendu muszą być dodatnie")
        if self.eps_norm <= 0:
            raise ConfigError(f"eps_norm musi być dodatnie, otrzymano {self.eps_norm}")
        if self.e_r_policy not in E_R_POLICIES:
            raise ConfigError(f"Nieobsługiwana polityka e_r: {self.e_r_policy}")
        if self.e_r_sigma < 0:
            raise ConfigError(f"e_r_sigma musi być nieujemne, otrzymano {self.e_r_sigma}")


def uniform_init(rng: np.random.Generator, fan_out: int, fan_in: int, dtype) -> Tensor:
    """Wagi z U(±sqrt(1/fan_in))."""
    bound = math.sqrt(1.0 / fan_in)
    return parameter(rng.uniform(-bound, bound, size=(fan_out, fan_in)), dtype=dtype)


def zeros(n: int, dtype) -> Tensor:
    return parameter(np.zeros(n), dtype=dtype)


class FrontendParams:
    """Projekcje liniowe do wspólnej przestrzeni i zamrożony wektor e_r dla ewaluacji."""

    def __init__(self, W_text: Tensor, b_text: Tensor, W_visual: Tensor, b_visual: Tensor,
                 W_prompt: Tensor, b_prompt: Tensor, e_r_eval: np.ndarray):
        self.W_text, self.b_text = W_text, b_text
        self.W_visual, self.b_visual = W_visual, b_visual
        self.W_prompt, self.b_prompt = W_prompt, b_prompt
        self.e_r_eval = e_r_eval

    @classmethod
    def init(cls, config: FrontendConfig, rng: np.random.Generator, dtype=np.float64) -> 'FrontendParams':
        d = config.d_common
        params = cls(
            W_text=uniform_init(rng, d, config.d_text_in, dtype), b_text=zeros(d, dtype),
            W_visual=uniform_init(rng, d, config.d_visual_in, dtype), b_visual=zeros(d, dtype),
            W_prompt=uniform_init(rng, d, config.d_text_in, dtype), b_prompt=zeros(d, dtype),
            e_r_eval=np.random.default_rng(config.seed).standard_normal(d).astype(dtype),
        )
        logger.debug(f"Zainicjalizowano frontend: {config.d_text_in}/{config.d_visual_in} -> {d}")
        return params

    def named_parameters(self) -> Dict[str, Tensor]:
        return OrderedDict([
            ('W_text', self.W_text), ('b_text', self.b_text),
            ('W_visual', self.W_visual), ('b_visual', self.b_visual),
            ('W_prompt', self.W_prompt), ('b_prompt', self.b_prompt),
        ])

    def buffers(self) -> Dict[str, np.ndarray]:
        return OrderedDict([('e_r_eval', self.e_r_eval)])


class FrontendOutput(NamedTuple):
    e_p: Tensor
    e_t: Tensor
    e_v: Tensor
    e_r: Tensor


def _check_dim(batch_array: np.ndarray, expected: int, field_name: str) -> None:
    if batch_array.ndim != 2 or batch_array.shape[1] != expected:
        raise DimensionError(f"Pole {field_name} ma zły wymiar (oczekiwano {expected})",
                             batch_array.shape, (batch_array.shape[0] if batch_array.ndim else 0, expected))


def sample_visual_prompt(config: FrontendConfig, params: FrontendParams, n: int, training: bool,
                         rng: Optional[np.random.Generator], dtype) -> np.ndarray:
    """Losowy prompt wizualny: świeży przy treningu, zamrożony przy ewaluacji; zawsze znormalizowany."""
    if training:
        if rng is None:
            raise UsageError("Losowanie e_r w trybie treningu wymaga generatora")
        raw = rng.standard_normal((n, config.d_common)) * config.e_r_sigma
    else:
        raw = np.tile(params.e_r_eval.astype(np.float64), (n, 1))
    norms = np.maximum(np.linalg.norm(raw, axis=-1, keepdims=True), config.eps_norm)
    return (raw / norms).astype(dtype)


def project(params: FrontendParams, config: FrontendConfig, batch: Batch, training: bool,
            rng: Optional[np.random.Generator] = None) -> FrontendOutput:
    """Rzutuje osadzenia tekstu, obrazu i promptu do wspólnej przestrzeni i normalizuje."""
    _check_dim(batch.e_text, config.d_text_in, 'e_text')
    _check_dim(batch.e_visual, config.d_visual_in, 'e_visual')
    _check_dim(batch.e_prompt, config.d_text_in, 'e_prompt')
    dtype = params.W_text.dtype
    eps = config.eps_norm
    e_t = l2_normalize(linear(Tensor(batch.e_text, dtype=dtype), params.W_text, params.b_text), eps)
    e_v = l2_normalize(linear(Tensor(batch.e_visual, dtype=dtype), params.W_visual, params.b_visual), eps)
    e_p = l2_normalize(linear(Tensor(batch.e_prompt, dtype=dtype), params.W_prompt, params.b_prompt), eps)
    e_r = Tensor(sample_visual_prompt(config, params, len(batch), training, rng, dtype))
    return FrontendOutput(e_p=e_p, e_t=e_t, e_v=e_v, e_r=e_r)
