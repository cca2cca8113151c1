# experts.py
import logging
from dataclasses import dataclass

from exceptions import ConfigError
from tensor_core import Tensor, cosine_similarity, euclidean_distance, relu

logger = logging.getLogger(__name__)


@dataclass
class ExpertLossConfig:
    margin_m: float = 1.0
    eps_cos: float = 1e-8

    def __post_init__(self):
        if self.margin_m < 0:
            raise ConfigError(f"Margines musi być nieujemny, otrzymano {self.margin_m}")
        if self.eps_cos <= 0:
            raise ConfigError("eps_cos musi być dodatnie")


@dataclass
class ExpertOutputs:
    """Reprezentacje ekspertów (h_t, h_v, h_tv) i ich straty."""
    h_t: Tensor
    h_v: Tensor
    h_tv: Tensor
    L_T: Tensor
    L_V: Tensor
    L_S: Tensor


def _triplet(anchor: Tensor, positive: Tensor, negative: Tensor, margin: float) -> Tensor:
    # max(0, m + d(a, p) - d(a, n)), średnia po batchu
    return relu(euclidean_distance(anchor, positive) - euclidean_distance(anchor, negative) + margin).mean()


def loss_textual(E_t: Tensor, E_v: Tensor, E_tv: Tensor, cfg: ExpertLossConfig) -> Tensor:
    """Ekspert tekstowy: kotwica E_tv, pozytyw E_t, negatyw E_v."""
    return _triplet(E_tv, E_t, E_v, cfg.margin_m)


def loss_visual(E_t: Tensor, E_v: Tensor, E_tv: Tensor, cfg: ExpertLossConfig) -> Tensor:
    """Ekspert wizualny: lustro eksperta tekstowego (pozytyw E_v, negatyw E_t)."""
    return _triplet(E_tv, E_v, E_t, cfg.margin_m)


def loss_alignment(E_t: Tensor, E_v: Tensor, E_tv: Tensor, cfg: ExpertLossConfig) -> Tensor:
    """Spójność kosinusowa: (1 − cos(E_tv, E_t)) + (1 − cos(E_tv, E_v)), wartość w [0, 4]."""
    cos_t = cosine_similarity(E_tv, E_t, cfg.eps_cos)
    cos_v = cosine_similarity(E_tv, E_v, cfg.eps_cos)
    return (2.0 - cos_t - cos_v).mean()


def expert_outputs(E_t: Tensor, E_v: Tensor, E_tv: Tensor, cfg: ExpertLossConfig) -> ExpertOutputs:
    # głowy ekspertów to tożsamość: h_x = E_x
    return ExpertOutputs(
        h_t=E_t, h_v=E_v, h_tv=E_tv,
        L_T=loss_textual(E_t, E_v, E_tv, cfg),
        L_V=loss_visual(E_t, E_v, E_tv, cfg),
        L_S=loss_alignment(E_t, E_v, E_tv, cfg),
    )
