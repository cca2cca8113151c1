# gating.py
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from exceptions import ConfigError, DimensionError, InputError
from experts import ExpertOutputs
from frontend import uniform_init, zeros
from tensor_core import Tensor, concat, cross_entropy_loss, linear, relu, softmax_with_temperature

logger = logging.getLogger(__name__)

N_EXPERTS = 3
N_CLASSES = 3
# kolejność wag bramki: [pi_t, pi_v, pi_tv]
GATE_ORDER = ('textual', 'visual', 'alignment')


@dataclass
class GatingConfig:
    d_hidden: int = 256
    tau: float = 1.0

    def __post_init__(self):
        if self.d_hidden < 1:
            raise ConfigError("d_hidden musi być dodatnie")
        if not self.tau > 0:
            raise ConfigError(f"Temperatura bramki musi być dodatnia, otrzymano {self.tau}")


class GatingParams:
    """Dwuwarstwowy MLP bramki: W1 (d_hidden × 2·d_common), W2 (3 × d_hidden)."""

    def __init__(self, W1: Tensor, b1: Tensor, W2: Tensor, b2: Tensor, tau: float = 1.0):
        if not tau > 0:
            raise ConfigError(f"Temperatura bramki musi być dodatnia, otrzymano {tau}")
        if W2.shape[0] != N_EXPERTS:
            raise ConfigError(f"Bramka musi mieć {N_EXPERTS} wyjścia, W2 ma kształt {W2.shape}")
        self.W1, self.b1, self.W2, self.b2 = W1, b1, W2, b2
        self.tau = tau

    @property
    def d_hidden(self) -> int:
        return self.W1.shape[0]

    @classmethod
    def init(cls, config: GatingConfig, d_common: int, rng: np.random.Generator, dtype=np.float64) -> 'GatingParams':
        return cls(W1=uniform_init(rng, config.d_hidden, 2 * d_common, dtype), b1=zeros(config.d_hidden, dtype),
                   W2=uniform_init(rng, N_EXPERTS, config.d_hidden, dtype), b2=zeros(N_EXPERTS, dtype),
                   tau=config.tau)

    def named_parameters(self) -> Dict[str, Tensor]:
        return OrderedDict([('W1', self.W1), ('b1', self.b1), ('W2', self.W2), ('b2', self.b2)])


class ClassifierParams:
    def __init__(self, W_c: Tensor, b_c: Tensor):
        if W_c.shape[0] != N_CLASSES:
            raise ConfigError(f"Klasyfikator musi mieć {N_CLASSES} klasy, W_c ma kształt {W_c.shape}")
        self.W_c, self.b_c = W_c, b_c

    @classmethod
    def init(cls, d_model: int, rng: np.random.Generator, dtype=np.float64) -> 'ClassifierParams':
        return cls(W_c=uniform_init(rng, N_CLASSES, d_model, dtype), b_c=zeros(N_CLASSES, dtype))

    def named_parameters(self) -> Dict[str, Tensor]:
        return OrderedDict([('W_c', self.W_c), ('b_c', self.b_c)])


@dataclass
class ForwardTrace:
    """Wartości pośrednie jednego przejścia w przód (batch)."""
    e_p: Tensor
    e_t: Tensor
    e_v: Tensor
    e_r: Tensor
    E_t: Tensor
    E_v: Tensor
    E_tv: Tensor
    gate_logits: Tensor
    pi: Tensor
    h: Tensor
    logits: Tensor
    probs: Tensor
    L_T: Tensor
    L_V: Tensor
    L_S: Tensor
    L_CE: Optional[Tensor] = None
    L_total: Optional[Tensor] = None

    def losses(self) -> Dict[str, float]:
        return OrderedDict((name, getattr(self, name).item() if getattr(self, name) is not None else float('nan'))
                           for name in ('L_T', 'L_V', 'L_S', 'L_CE', 'L_total'))


def gate_logits(params: GatingParams, e_t: Tensor, e_v: Tensor) -> Tensor:
    """W2·ReLU(W1·[e_t; e_v] + b1) + b2."""
    x = concat([e_t, e_v], axis=-1)
    if x.shape[-1] != params.W1.shape[1]:
        raise DimensionError("gate: wymiar [e_t; e_v] nie pasuje do W1", x.shape, params.W1.shape)
    return linear(relu(linear(x, params.W1, params.b1)), params.W2, params.b2)


def gate_with_logits(params: GatingParams, e_t: Tensor, e_v: Tensor,
                     n_experts: int = N_EXPERTS) -> Tuple[Tensor, Tensor]:
    """Zwraca (logity bramki, pi); logity zawsze mają trzy składowe."""
    logits = gate_logits(params, e_t, e_v)
    if n_experts == 2:
        active = logits[..., 0:2]
    elif n_experts == N_EXPERTS:
        active = logits
    else:
        raise ConfigError(f"Obsługiwane są 2 lub 3 eksperty, otrzymano {n_experts}")
    return logits, softmax_with_temperature(active, params.tau)


def gate(params: GatingParams, e_t: Tensor, e_v: Tensor, n_experts: int = N_EXPERTS) -> Tensor:
    """Wagi ekspertów pi = softmax(logity / tau) w kolejności [pi_t, pi_v, pi_tv].

    Przy n_experts=2 (ablacja eksperta wyrównania) softmax liczony jest tylko z dwóch pierwszych logitów.
    """
    return gate_with_logits(params, e_t, e_v, n_experts)[1]


def fuse_experts(pi: Tensor, outputs: ExpertOutputs) -> Tensor:
    """h = pi_t·h_t + pi_v·h_v + pi_tv·h_tv (przy dwóch ekspertach bez składnika h_tv)."""
    if pi.shape[-1] not in (2, 3):
        raise DimensionError("fuse_experts: pi musi mieć 2 lub 3 składowe", pi.shape)
    if not np.allclose(np.sum(pi.data, axis=-1), 1.0, atol=1e-6):
        raise InputError("fuse_experts: wagi pi nie sumują się do 1")
    h = pi[..., 0:1] * outputs.h_t + pi[..., 1:2] * outputs.h_v
    if pi.shape[-1] == 3:
        h = h + pi[..., 2:3] * outputs.h_tv
    return h


def classify(params: ClassifierParams, h: Tensor) -> Tuple[Tensor, Tensor]:
    """logits = W_c·h + b_c, probs = softmax(logits)."""
    if h.shape[-1] != params.W_c.shape[1]:
        raise DimensionError("classify: wymiar h nie pasuje do W_c", h.shape, params.W_c.shape)
    logits = linear(h, params.W_c, params.b_c)
    return logits, softmax_with_temperature(logits, 1.0)


def total_loss(trace: ForwardTrace, labels: Optional[Sequence[int]] = None,
               record_ids: Optional[Sequence[str]] = None) -> Tensor:
    """L = L_T + L_V + L_S + L_CE (suma bez wag); uzupełnia L_CE i L_total w śladzie."""
    if labels is not None:
        trace.L_CE = cross_entropy_loss(trace.logits, labels, record_ids)
    if trace.L_CE is None:
        raise InputError("total_loss: brak etykiet i brak policzonego L_CE")
    trace.L_total = trace.L_T + trace.L_V + trace.L_S + trace.L_CE
    return trace.L_total
