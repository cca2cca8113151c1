# fusion.py
import math
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from exceptions import ConfigError, DimensionError
from frontend import FrontendOutput, uniform_init, zeros
from tensor_core import (Tensor, activation, concat, dropout, layer_norm, linear, matmul, parameter,
                         softmax_with_temperature)

logger = logging.getLogger(__name__)


@dataclass
class FusionConfig:
    d_in: int = 512
    d_model: int = 256
    n_heads: int = 4
    n_layers: int = 1
    d_ffn: int = 512
    dropout_p: float = 0.1
    eps_ln: float = 1e-5

    def __post_init__(self):
        if min(self.d_in, self.d_model, self.n_heads, self.d_ffn) < 1:
            raise ConfigError("Wymiary bloku fuzji muszą być dodatnie")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} nie dzieli się przez n_heads={self.n_heads}")
        if self.n_layers not in (1, 2):
            raise ConfigError(f"n_layers musi wynosić 1 lub 2, otrzymano {self.n_layers}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p poza zakresem [0, 1): {self.dropout_p}")
        if self.eps_ln <= 0:
            raise ConfigError("eps_ln musi być dodatnie")


class FusionLayerParams:
    """Jedna warstwa pre-norm: samouwaga wielogłowa + FFN."""

    NAMES = ('W_q', 'b_q', 'W_k', 'b_k', 'W_v', 'b_v', 'W_o', 'b_o',
             'ln1_gamma', 'ln1_beta', 'ln2_gamma', 'ln2_beta',
             'W_ff1', 'b_ff1', 'W_ff2', 'b_ff2')

    def __init__(self, **tensors: Tensor):
        for name in self.NAMES:
            setattr(self, name, tensors[name])

    @classmethod
    def init(cls, config: FusionConfig, rng: np.random.Generator, dtype) -> 'FusionLayerParams':
        dm, dff = config.d_model, config.d_ffn
        return cls(
            W_q=uniform_init(rng, dm, dm, dtype), b_q=zeros(dm, dtype),
            W_k=uniform_init(rng, dm, dm, dtype), b_k=zeros(dm, dtype),
            W_v=uniform_init(rng, dm, dm, dtype), b_v=zeros(dm, dtype),
            W_o=uniform_init(rng, dm, dm, dtype), b_o=zeros(dm, dtype),
            ln1_gamma=parameter(np.ones(dm), dtype), ln1_beta=zeros(dm, dtype),
            ln2_gamma=parameter(np.ones(dm), dtype), ln2_beta=zeros(dm, dtype),
            W_ff1=uniform_init(rng, dff, dm, dtype), b_ff1=zeros(dff, dtype),
            W_ff2=uniform_init(rng, dm, dff, dtype), b_ff2=zeros(dm, dtype),
        )

    def named_parameters(self) -> Dict[str, Tensor]:
        return OrderedDict((name, getattr(self, name)) for name in self.NAMES)


class FusionParams:
    """Parametry bloku Fuse: projekcja wejścia, osadzenia typu tokenu (slot 0/1) i warstwy."""

    def __init__(self, W_in: Tensor, b_in: Tensor, token_type: Tensor, layers: List[FusionLayerParams]):
        self.W_in = W_in
        self.b_in = b_in
        self.token_type = token_type
        self.layers = layers

    @classmethod
    def init(cls, config: FusionConfig, rng: np.random.Generator, dtype=np.float64) -> 'FusionParams':
        return cls(
            W_in=uniform_init(rng, config.d_model, config.d_in, dtype),
            b_in=zeros(config.d_model, dtype),
            token_type=parameter(rng.normal(0.0, 0.02, size=(2, config.d_model)), dtype),
            layers=[FusionLayerParams.init(config, rng, dtype) for _ in range(config.n_layers)],
        )

    def named_parameters(self) -> Dict[str, Tensor]:
        named = OrderedDict([('W_in', self.W_in), ('b_in', self.b_in), ('token_type', self.token_type)])
        for i, layer in enumerate(self.layers):
            for name, t in layer.named_parameters().items():
                named[f"layers.{i}.{name}"] = t
        return named


def _split_heads(t: Tensor, n_heads: int) -> Tensor:
    n, s, dm = t.shape
    return t.reshape(n, s, n_heads, dm // n_heads).transpose(0, 2, 1, 3)


def _self_attention(layer: FusionLayerParams, config: FusionConfig, y: Tensor, training: bool,
                    rng: Optional[np.random.Generator], attention_out: Optional[list]) -> Tensor:
    n, s, dm = y.shape
    q = _split_heads(linear(y, layer.W_q, layer.b_q), config.n_heads)
    k = _split_heads(linear(y, layer.W_k, layer.b_k), config.n_heads)
    v = _split_heads(linear(y, layer.W_v, layer.b_v), config.n_heads)
    scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dm // config.n_heads))
    probs = softmax_with_temperature(scores, 1.0, axis=-1)
    if attention_out is not None:
        attention_out.append(probs.data.copy())
    probs = dropout(probs, config.dropout_p, training, rng)
    context = matmul(probs, v).transpose(0, 2, 1, 3).reshape(n, s, dm)
    return linear(context, layer.W_o, layer.b_o)


def _feed_forward(layer: FusionLayerParams, config: FusionConfig, y: Tensor, training: bool,
                  rng: Optional[np.random.Generator]) -> Tensor:
    hidden = activation('gelu', linear(y, layer.W_ff1, layer.b_ff1))
    hidden = dropout(hidden, config.dropout_p, training, rng)
    return linear(hidden, layer.W_ff2, layer.b_ff2)


def fuse(params: FusionParams, config: FusionConfig, a: Tensor, b: Tensor, training: bool,
         rng: Optional[np.random.Generator] = None, attention_out: Optional[list] = None) -> Tensor:
    """Fuse(a, b): dwa tokeny przez enkoder Transformera, wynik to średnia tokenów wyjściowych."""
    single = a.ndim == 1
    if single:
        a, b = a.reshape(1, -1), b.reshape(1, -1)
    if a.shape != b.shape or a.ndim != 2 or a.shape[-1] != config.d_in:
        raise DimensionError(f"fuse: wejścia muszą mieć kształt (n, {config.d_in})", a.shape, b.shape)
    n, dm = a.shape[0], config.d_model
    t0 = linear(a, params.W_in, params.b_in).reshape(n, 1, dm)
    t1 = linear(b, params.W_in, params.b_in).reshape(n, 1, dm)
    x = concat([t0, t1], axis=1) + params.token_type
    for layer in params.layers:
        x = x + _self_attention(layer, config, layer_norm(x, layer.ln1_gamma, layer.ln1_beta, config.eps_ln),
                                training, rng, attention_out)
        x = x + _feed_forward(layer, config, layer_norm(x, layer.ln2_gamma, layer.ln2_beta, config.eps_ln),
                              training, rng)
    pooled = x.mean(axis=1)
    return pooled.reshape(dm) if single else pooled


class FusedTriple(NamedTuple):
    E_t: Tensor
    E_v: Tensor
    E_tv: Tensor


def compute_fused_triple(model, features: FrontendOutput, training: bool,
                         rng: Optional[np.random.Generator] = None) -> FusedTriple:
    """E_t = Fuse(e_p, e_t), E_v = Fuse(e_r, e_v), E_tv = Fuse(e_t, e_v), każdy z osobnymi wagami."""
    cfg = model.fusion_config
    E_t = fuse(model.fusion_textual, cfg, features.e_p, features.e_t, training, rng)
    E_v = fuse(model.fusion_visual, cfg, features.e_r, features.e_v, training, rng)
    E_tv = fuse(model.fusion_crossmodal, cfg, features.e_t, features.e_v, training, rng)
    return FusedTriple(E_t=E_t, E_v=E_v, E_tv=E_tv)
