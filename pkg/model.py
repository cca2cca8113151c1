# model.py
import logging
from collections import OrderedDict
from dataclasses import asdict
from typing import Dict, List, Optional

import numpy as np

from data_io import Batch
from exceptions import CheckpointError, ConfigError, DimensionError
from experts import ExpertLossConfig, expert_outputs
from frontend import FrontendConfig, FrontendParams, project
from fusion import FusionConfig, FusionParams, compute_fused_triple
from gating import (ClassifierParams, ForwardTrace, GatingConfig, GatingParams, N_EXPERTS, classify,
                    fuse_experts, gate_with_logits, total_loss)
from tensor_core import Tensor

logger = logging.getLogger(__name__)

PARAMETER_GROUPS = ('frontend', 'fusion_textual', 'fusion_visual', 'fusion_crossmodal', 'gating', 'classifier')


class DimeModel:
    """Model z trzema ekspertami: frontend, trzy bloki Fuse, bramka i klasyfikator."""

    def __init__(self, frontend_config: FrontendConfig, fusion_config: FusionConfig,
                 expert_config: ExpertLossConfig, gating_config: GatingConfig,
                 seed: int = 0, dtype=np.float64, ablate_alignment: bool = False):
        if fusion_config.d_in != frontend_config.d_common:
            raise ConfigError(f"fusion.d_in ({fusion_config.d_in}) musi równać się "
                              f"frontend.d_common ({frontend_config.d_common})")
        self.frontend_config = frontend_config
        self.fusion_config = fusion_config
        self.expert_config = expert_config
        self.gating_config = gating_config
        self.ablate_alignment = ablate_alignment
        self.dtype = np.dtype(dtype).type
        self.seed = seed

        rng = np.random.default_rng(seed)
        self.frontend = FrontendParams.init(frontend_config, rng, self.dtype)
        self.fusion_textual = FusionParams.init(fusion_config, rng, self.dtype)
        self.fusion_visual = FusionParams.init(fusion_config, rng, self.dtype)
        self.fusion_crossmodal = FusionParams.init(fusion_config, rng, self.dtype)
        self.gating = GatingParams.init(gating_config, frontend_config.d_common, rng, self.dtype)
        self.classifier = ClassifierParams.init(fusion_config.d_model, rng, self.dtype)
        logger.info(f"Utworzono model: {self.num_parameters()} parametrów, "
                    f"precyzja {np.dtype(self.dtype).name}, ablacja AE: {ablate_alignment}")

    @property
    def n_experts(self) -> int:
        return 2 if self.ablate_alignment else N_EXPERTS

    def _group_modules(self):
        return OrderedDict((group, getattr(self, group)) for group in PARAMETER_GROUPS)

    def named_parameters(self) -> Dict[str, Tensor]:
        named = OrderedDict()
        for group, module in self._group_modules().items():
            for name, t in module.named_parameters().items():
                named[f"{group}.{name}"] = t
        return named

    def parameter_groups(self) -> Dict[str, List[str]]:
        return OrderedDict((group, [f"{group}.{name}" for name in module.named_parameters()])
                           for group, module in self._group_modules().items())

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.named_parameters().values())

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = OrderedDict((name, t.data.copy()) for name, t in self.named_parameters().items())
        state['frontend.e_r_eval'] = self.frontend.e_r_eval.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Kopiuje wartości do istniejących parametrów; najpierw sprawdza wszystkie kształty."""
        named = self.named_parameters()
        expected = set(named) | {'frontend.e_r_eval'}
        missing, unexpected = expected - set(state), set(state) - expected
        if missing or unexpected:
            raise CheckpointError(f"Niezgodny zestaw parametrów; brakuje: {sorted(missing)}, "
                                  f"nadmiarowe: {sorted(unexpected)}")
        for name, t in named.items():
            if tuple(state[name].shape) != t.shape:
                raise DimensionError(f"Parametr {name} ma inny kształt", state[name].shape, t.shape)
        if tuple(state['frontend.e_r_eval'].shape) != self.frontend.e_r_eval.shape:
            raise DimensionError("Bufor e_r_eval ma inny kształt",
                                 state['frontend.e_r_eval'].shape, self.frontend.e_r_eval.shape)
        for name, t in named.items():
            t.data[...] = state[name]
        self.frontend.e_r_eval = np.array(state['frontend.e_r_eval'], dtype=self.dtype)

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.grad = None

    def forward(self, batch: Batch, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> ForwardTrace:
        """Pełne przejście w przód; straty ekspertów policzone, L_CE uzupełnia total_loss."""
        features = project(self.frontend, self.frontend_config, batch, training, rng)
        fused = compute_fused_triple(self, features, training, rng)
        outputs = expert_outputs(fused.E_t, fused.E_v, fused.E_tv, self.expert_config)
        logits_gate, pi = gate_with_logits(self.gating, features.e_t, features.e_v, self.n_experts)
        if self.ablate_alignment:
            L_S = Tensor(np.zeros((), dtype=self.dtype))
        else:
            L_S = outputs.L_S
        h = fuse_experts(pi, outputs)
        logits, probs = classify(self.classifier, h)
        return ForwardTrace(e_p=features.e_p, e_t=features.e_t, e_v=features.e_v, e_r=features.e_r,
                            E_t=fused.E_t, E_v=fused.E_v, E_tv=fused.E_tv,
                            gate_logits=logits_gate, pi=pi, h=h, logits=logits, probs=probs,
                            L_T=outputs.L_T, L_V=outputs.L_V, L_S=L_S)

    def loss(self, batch: Batch, training: bool = False,
             rng: Optional[np.random.Generator] = None) -> ForwardTrace:
        trace = self.forward(batch, training, rng)
        total_loss(trace, batch.labels, batch.ids)
        return trace

    def configs(self) -> Dict[str, dict]:
        return OrderedDict([
            ('frontend', asdict(self.frontend_config)),
            ('fusion', asdict(self.fusion_config)),
            ('experts', asdict(self.expert_config)),
            ('gating', asdict(self.gating_config)),
            ('model', {'seed': self.seed, 'precision': 'f32' if self.dtype == np.float32 else 'f64',
                       'ablate_alignment': self.ablate_alignment}),
        ])

    @classmethod
    def from_configs(cls, configs: Dict[str, dict]) -> 'DimeModel':
        model_cfg = configs.get('model', {})
        return cls(FrontendConfig(**configs['frontend']), FusionConfig(**configs['fusion']),
                   ExpertLossConfig(**configs['experts']), GatingConfig(**configs['gating']),
                   seed=model_cfg.get('seed', 0),
                   dtype=np.float32 if model_cfg.get('precision') == 'f32' else np.float64,
                   ablate_alignment=model_cfg.get('ablate_alignment', False))
