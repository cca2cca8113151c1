# config.py
import copy
import json
import logging
import os
from dataclasses import asdict
from typing import Any, Dict, Optional

from data_io import SplitSpec, SyntheticConfig
from exceptions import ConfigError
from experts import ExpertLossConfig
from frontend import FrontendConfig
from fusion import FusionConfig
from gating import GatingConfig
from save_load import write_json
from trainer import TrainConfig

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = 'DIME_OUTPUT_DIR'
DEFAULT_CONFIG_PATH = os.path.join('data', 'config.json')

SECTIONS = ('frontend', 'fusion', 'experts', 'gating', 'model', 'train', 'split', 'synthetic', 'paths')


def _default_sections() -> Dict[str, Any]:
    return {
        'frontend': asdict(FrontendConfig()),
        'fusion': asdict(FusionConfig()),
        'experts': asdict(ExpertLossConfig()),
        'gating': asdict(GatingConfig()),
        'model': {'seed': 0},
        'train': asdict(TrainConfig()),
        'split': asdict(SplitSpec()),
        'synthetic': asdict(SyntheticConfig()),
        'paths': {'dataset': None, 'output_dir': os.environ.get(OUTPUT_DIR_ENV, 'runs')},
        'ablate_alignment': False,
    }


def _deep_update(base: Dict[str, Any], update: Dict[str, Any]) -> None:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value


class RunConfig:
    """Scentralizowana konfiguracja przebiegu: sekcje modułów, ścieżki i flagi trybu."""

    def __init__(self, config_path: Optional[str] = None):
        self.config: Dict[str, Any] = _default_sections()
        if config_path is not None:
            self.load_config(config_path)

    def load_config(self, path: str) -> None:
        """Nakłada wartości z pliku JSON na bieżącą konfigurację."""
        if not os.path.exists(path):
            raise ConfigError(f"Nie znaleziono pliku konfiguracyjnego: {path}")
        try:
            with open(path, 'r', encoding='utf-8') as f:
                loaded = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Błąd podczas ładowania konfiguracji {path}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"Plik konfiguracyjny {path} musi zawierać obiekt JSON")
        unknown = set(loaded) - set(SECTIONS) - {'ablate_alignment'}
        if unknown:
            raise ConfigError(f"Nieznane sekcje konfiguracji: {sorted(unknown)}")
        _deep_update(self.config, loaded)
        logger.info(f"Wczytano konfigurację z: {path}")

    def save_config(self, path: str) -> None:
        """Zapisuje konfigurację (atomowo) do pliku JSON."""
        write_json(path, self.config)

    def get(self, key: str, default: Any = None) -> Any:
        """Pobiera wartość z konfiguracji (klucz z kropkami, np. 'train.lr')."""
        keys = key.split('.')
        value = self.config
        for k in keys:
            if isinstance(value, dict):
                value = value.get(k)
            else:
                return default
        return value if value is not None else default

    def set(self, key: str, value: Any) -> None:
        """Ustawia wartość w konfiguracji."""
        keys = key.split('.')
        config = self.config
        for k in keys[:-1]:
            if k not in config:
                config[k] = {}
            config = config[k]
        config[keys[-1]] = value

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.config)

    # --- typowane konfiguracje ---

    def _build(self, cls, section: str):
        try:
            return cls(**self.config[section])
        except TypeError as e:
            raise ConfigError(f"Niepoprawna sekcja '{section}': {e}") from e

    def frontend_config(self) -> FrontendConfig:
        return self._build(FrontendConfig, 'frontend')

    def fusion_config(self) -> FusionConfig:
        return self._build(FusionConfig, 'fusion')

    def expert_config(self) -> ExpertLossConfig:
        return self._build(ExpertLossConfig, 'experts')

    def gating_config(self) -> GatingConfig:
        return self._build(GatingConfig, 'gating')

    def train_config(self) -> TrainConfig:
        return self._build(TrainConfig, 'train')

    def split_spec(self) -> SplitSpec:
        return self._build(SplitSpec, 'split')

    def synthetic_config(self) -> SyntheticConfig:
        return self._build(SyntheticConfig, 'synthetic')

    def validate_config(self) -> bool:
        """Buduje wszystkie typowane konfiguracje; ConfigError przy pierwszym naruszeniu."""
        self.frontend_config()
        fusion = self.fusion_config()
        self.expert_config()
        self.gating_config()
        self.train_config()
        self.split_spec()
        self.synthetic_config()
        if fusion.d_in != self.get('frontend.d_common'):
            raise ConfigError(f"fusion.d_in ({fusion.d_in}) musi równać się frontend.d_common "
                              f"({self.get('frontend.d_common')})")
        if not isinstance(self.config.get('ablate_alignment'), bool):
            raise ConfigError("ablate_alignment musi być wartością logiczną")
        return True


def load_run_config(path: Optional[str] = None) -> RunConfig:
    """Konfiguracja domyślna, nadpisana plikiem (jawnym lub data/config.json, jeśli istnieje)."""
    if path is None and os.path.exists(DEFAULT_CONFIG_PATH):
        path = DEFAULT_CONFIG_PATH
    return RunConfig(path)
