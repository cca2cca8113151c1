# data_io.py
import json
import logging
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from exceptions import ConfigError, DatasetError, DatasetFormatError, RecordError, SplitError
from save_load import atomic_write_text

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
LABEL_NAMES = ("Favor", "Against", "Neutral")
DOMINANCE_MODES = ('text_dominant', 'visual_dominant', 'shared', 'mixed')
SPLIT_MODES = ('in_target', 'zero_shot')
STORAGE_DTYPE = np.float32


@dataclass
class EmbeddingRecord:
    """Pojedyncza próbka: cel, etykieta stanowiska i wektory osadzeń."""
    id: str
    target: str
    label: int
    e_text: np.ndarray
    e_visual: np.ndarray
    e_prompt: Optional[np.ndarray] = None
    meta: Dict[str, str] = field(default_factory=dict)


@dataclass
class Batch:
    """Rekordy złożone w macierze gotowe do przejścia w przód."""
    ids: List[str]
    targets: List[str]
    labels: np.ndarray
    e_text: np.ndarray
    e_visual: np.ndarray
    e_prompt: np.ndarray

    def __len__(self):
        return len(self.ids)


@dataclass
class Dataset:
    records: List[EmbeddingRecord]
    d_text: int
    d_visual: int
    default_prompt_embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        self.validate()

    def __len__(self):
        return len(self.records)

    def validate(self) -> None:
        """Sprawdza niezmienniki zbioru; zgłasza RecordError z identyfikatorem rekordu."""
        if self.default_prompt_embedding is not None:
            prompt = np.asarray(self.default_prompt_embedding)
            if prompt.shape != (self.d_text,):
                raise DatasetError(f"Domyślne osadzenie promptu ma kształt {prompt.shape}, oczekiwano ({self.d_text},)")
            if not np.all(np.isfinite(prompt)):
                raise DatasetError("Domyślne osadzenie promptu zawiera wartości nieskończone")
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise RecordError("zduplikowany identyfikator", rec.id)
            seen.add(rec.id)
            if isinstance(rec.label, bool) or not isinstance(rec.label, (int, np.integer)) \
                    or rec.label not in (0, 1, 2):
                raise RecordError(f"etykieta {rec.label!r} spoza zbioru {{0, 1, 2}}", rec.id)
            for name, vec, dim in (('e_text', rec.e_text, self.d_text),
                                   ('e_visual', rec.e_visual, self.d_visual),
                                   ('e_prompt', rec.e_prompt, self.d_text)):
                if vec is None:
                    continue
                if np.ndim(vec) != 1 or len(vec) != dim:
                    raise RecordError(f"pole {name} ma długość {np.shape(vec)}, oczekiwano {dim}", rec.id)
                if not np.all(np.isfinite(vec)):
                    raise RecordError(f"pole {name} zawiera wartości nieskończone", rec.id)
            if rec.e_prompt is None and self.default_prompt_embedding is None:
                raise RecordError("brak osadzenia promptu i brak domyślnego osadzenia zbioru", rec.id)

    @property
    def ids(self) -> List[str]:
        return [r.id for r in self.records]

    def targets(self) -> List[str]:
        return sorted({r.target for r in self.records})

    def subset(self, indices: Sequence[int]) -> 'Dataset':
        return Dataset([self.records[i] for i in indices], self.d_text, self.d_visual,
                       self.default_prompt_embedding)

    def filter_target(self, targets: Sequence[str]) -> 'Dataset':
        wanted = set(targets)
        return self.subset([i for i, r in enumerate(self.records) if r.target in wanted])

    def filter_meta(self, key: str, value: str) -> 'Dataset':
        return self.subset([i for i, r in enumerate(self.records) if r.meta.get(key) == value])

    def summary(self) -> Dict[str, Dict[str, int]]:
        """Liczności rekordów w podziale na cel i etykietę."""
        counts: Dict[str, Dict[str, int]] = OrderedDict()
        for target in self.targets():
            counts[target] = OrderedDict((name, 0) for name in LABEL_NAMES)
        for rec in self.records:
            counts[rec.target][LABEL_NAMES[rec.label]] += 1
        return counts

    def to_batch(self, indices: Optional[Sequence[int]] = None, dtype=np.float64) -> Batch:
        if indices is None:
            indices = range(len(self.records))
        recs = [self.records[i] for i in indices]
        if not recs:
            raise DatasetError("Nie można utworzyć pustego batcha")
        prompts = [r.e_prompt if r.e_prompt is not None else self.default_prompt_embedding for r in recs]
        return Batch(
            ids=[r.id for r in recs],
            targets=[r.target for r in recs],
            labels=np.array([r.label for r in recs], dtype=np.int64),
            e_text=np.stack([r.e_text for r in recs]).astype(dtype),
            e_visual=np.stack([r.e_visual for r in recs]).astype(dtype),
            e_prompt=np.stack(prompts).astype(dtype),
        )


@dataclass
class SplitSpec:
    mode: str = 'in_target'
    ratios: Tuple[float, float, float] = (0.7, 0.1, 0.2)
    held_out_targets: List[str] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        self.held_out_targets = list(self.held_out_targets)
        if self.mode not in SPLIT_MODES:
            raise ConfigError(f"Nieznany tryb podziału: {self.mode}")
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ConfigError(f"Proporcje podziału muszą być trzema liczbami dodatnimi: {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError(f"Proporcje podziału muszą sumować się do 1: {self.ratios}")
        if self.mode == 'zero_shot' and not self.held_out_targets:
            raise ConfigError("Podział zero-shot wymaga niepustej listy wstrzymanych celów")


@dataclass
class SyntheticConfig:
    n_per_class_per_target: int = 100
    targets: List[str] = field(default_factory=lambda: ['A', 'B'])
    d_text: int = 768
    d_visual: int = 512
    dominance: str = 'text_dominant'
    noise_sigma: float = 0.1
    seed: int = 0
    n_classes: int = 3

    def __post_init__(self):
        self.targets = list(self.targets)
        if self.n_per_class_per_target < 1:
            raise ConfigError(f"Liczba rekordów na klasę musi być >= 1, otrzymano {self.n_per_class_per_target}")
        if not self.targets or len(set(self.targets)) != len(self.targets):
            raise ConfigError(f"Lista celów musi być niepusta i bez powtórzeń: {self.targets}")
        if self.d_text < 1 or self.d_visual < 1:
            raise ConfigError("Wymiary osadzeń muszą być dodatnie")
        if self.dominance not in DOMINANCE_MODES:
            raise ConfigError(f"Nieznany tryb dominacji: {self.dominance}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma musi być nieujemne, otrzymano {self.noise_sigma}")
        if not 1 <= self.n_classes <= len(LABEL_NAMES):
            raise ConfigError(f"n_classes musi należeć do [1, {len(LABEL_NAMES)}]")


# --- format pliku ---

def _vector_to_json(vec: np.ndarray) -> List[float]:
    # wartości float32 zapisane jako dokładne liczby dziesiętne
    return np.asarray(vec, dtype=STORAGE_DTYPE).astype(np.float64).tolist()


def _vector_from_json(values, what: str, line_no: int) -> np.ndarray:
    if not isinstance(values, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        raise DatasetFormatError(f"pole {what} musi być listą liczb", line_no)
    return np.asarray(values, dtype=STORAGE_DTYPE)


def dumps_dataset(ds: Dataset) -> str:
    header = OrderedDict([
        ('version', FORMAT_VERSION),
        ('d_text', ds.d_text),
        ('d_visual', ds.d_visual),
        ('label_names', list(LABEL_NAMES)),
    ])
    if ds.default_prompt_embedding is not None:
        header['default_prompt_embedding'] = _vector_to_json(ds.default_prompt_embedding)
    lines = [json.dumps(header, ensure_ascii=False)]
    for rec in ds.records:
        obj = OrderedDict([
            ('id', rec.id),
            ('target', rec.target),
            ('label', int(rec.label)),
            ('e_text', _vector_to_json(rec.e_text)),
            ('e_visual', _vector_to_json(rec.e_visual)),
        ])
        if rec.e_prompt is not None:
            obj['e_prompt'] = _vector_to_json(rec.e_prompt)
        if rec.meta:
            obj['meta'] = {str(k): str(v) for k, v in rec.meta.items()}
        lines.append(json.dumps(obj, ensure_ascii=False))
    return '\n'.join(lines) + '\n'


def save_dataset(ds: Dataset, path: str) -> None:
    """Zapisuje zbiór w formacie liniowym (nagłówek + jeden rekord na linię)."""
    atomic_write_text(path, dumps_dataset(ds))
    logger.info(f"Zapisano zbiór {len(ds)} rekordów do: {path}")


def _parse_header(line: str) -> dict:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"nieprawidłowy nagłówek: {e}", 1) from None
    if not isinstance(header, dict):
        raise DatasetFormatError("nagłówek musi być obiektem", 1)
    for key in ('version', 'd_text', 'd_visual', 'label_names'):
        if key not in header:
            raise DatasetFormatError(f"brak pola nagłówka '{key}'", 1)
    if header['version'] != FORMAT_VERSION:
        raise DatasetFormatError(f"nieobsługiwana wersja formatu {header['version']}", 1)
    if list(header['label_names']) != list(LABEL_NAMES):
        raise DatasetFormatError(f"niezgodne nazwy etykiet {header['label_names']}", 1)
    for key in ('d_text', 'd_visual'):
        if not isinstance(header[key], int) or header[key] < 1:
            raise DatasetFormatError(f"pole '{key}' musi być dodatnią liczbą całkowitą", 1)
    return header


def _parse_record(line: str, line_no: int) -> EmbeddingRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"nieprawidłowy rekord: {e}", line_no) from None
    if not isinstance(obj, dict):
        raise DatasetFormatError("rekord musi być obiektem", line_no)
    for key in ('id', 'target', 'label', 'e_text', 'e_visual'):
        if key not in obj:
            raise DatasetFormatError(f"brak pola '{key}'", line_no)
    meta = obj.get('meta') or {}
    if not isinstance(meta, dict):
        raise DatasetFormatError("pole meta musi być obiektem", line_no)
    return EmbeddingRecord(
        id=str(obj['id']),
        target=str(obj['target']),
        label=obj['label'],
        e_text=_vector_from_json(obj['e_text'], 'e_text', line_no),
        e_visual=_vector_from_json(obj['e_visual'], 'e_visual', line_no),
        e_prompt=_vector_from_json(obj['e_prompt'], 'e_prompt', line_no) if obj.get('e_prompt') is not None else None,
        meta={str(k): str(v) for k, v in meta.items()},
    )


def load_dataset(path: str) -> Dataset:
    """Wczytuje zbiór i sprawdza wszystkie niezmienniki."""
    with open(path, 'r', encoding='utf-8') as f:
        lines = f.read().split('\n')
    if not lines or not lines[0].strip():
        raise DatasetFormatError("pusty plik - brak nagłówka", 1)
    header = _parse_header(lines[0])
    prompt = header.get('default_prompt_embedding')
    default_prompt = _vector_from_json(prompt, 'default_prompt_embedding', 1) if prompt is not None else None
    records = [_parse_record(line, line_no)
               for line_no, line in enumerate(lines[1:], start=2) if line.strip()]
    ds = Dataset(records, header['d_text'], header['d_visual'], default_prompt)
    logger.info(f"Wczytano zbiór {path}: {len(ds)} rekordów, cele: {ds.targets()}")
    return ds


# --- podziały ---

def _largest_remainder(quotas: np.ndarray, total: int) -> np.ndarray:
    counts = np.floor(quotas + 1e-9).astype(np.int64)
    order = sorted(range(len(quotas)), key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in order[:max(0, total - int(counts.sum()))]:
        counts[k] += 1
    return counts


def _allocate(strata: List[List[int]], ratios: Sequence[float]) -> np.ndarray:
    """Rozdziela liczności warstw tak, by każda była w ±1 od kwoty, a sumy dawały globalne proporcje."""
    ratios = np.asarray(ratios, dtype=np.float64)
    sizes = np.array([len(s) for s in strata], dtype=np.int64)
    quotas = sizes[:, None] * ratios[None, :]
    counts = np.floor(quotas + 1e-9).astype(np.int64)
    totals = _largest_remainder(sizes.sum() * ratios, int(sizes.sum()))
    deficit = totals - counts.sum(axis=0)
    leftover = sizes - counts.sum(axis=1)
    remainders = quotas - counts
    pairs = sorted(((s, k) for s in range(len(strata)) for k in range(len(ratios))),
                   key=lambda sk: (-remainders[sk], sk[0], sk[1]))
    for s, k in pairs:
        if leftover[s] > 0 and deficit[k] > 0:
            counts[s, k] += 1
            leftover[s] -= 1
            deficit[k] -= 1
    # zdarza się tylko przy bardzo małych warstwach
    for s in np.flatnonzero(leftover > 0):
        while leftover[s] > 0:
            k = int(np.argmax(deficit)) if deficit.max() > 0 else int(np.argmax(remainders[s]))
            counts[s, k] += 1
            leftover[s] -= 1
            deficit[k] -= 1
    return counts


def _stratified_split(ds: Dataset, indices: List[int], ratios: Sequence[float],
                      rng: np.random.Generator) -> List[List[int]]:
    groups: Dict[Tuple[str, int], List[int]] = {}
    for i in indices:
        rec = ds.records[i]
        groups.setdefault((rec.target, rec.label), []).append(i)
    keys = sorted(groups)
    strata = [groups[k] for k in keys]
    counts = _allocate(strata, ratios)
    parts: List[List[int]] = [[] for _ in ratios]
    for stratum, row in zip(strata, counts):
        shuffled = [stratum[j] for j in rng.permutation(len(stratum))]
        start = 0
        for k, n in enumerate(row):
            parts[k].extend(shuffled[start:start + n])
            start += n
    return [sorted(p) for p in parts]


def split_in_target(ds: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset, Dataset]:
    """Podział 7:1:2 warstwowany po (cel, etykieta)."""
    if spec.mode != 'in_target':
        raise SplitError(f"split_in_target wymaga trybu in_target, otrzymano {spec.mode}")
    if len(ds) == 0:
        raise SplitError("Nie można podzielić pustego zbioru")
    rng = np.random.default_rng(spec.seed)
    train, dev, test = _stratified_split(ds, list(range(len(ds))), spec.ratios, rng)
    logger.info(f"Podział in-target: train={len(train)}, dev={len(dev)}, test={len(test)}")
    return ds.subset(train), ds.subset(dev), ds.subset(test)


def split_zero_shot(ds: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset, Dataset]:
    """Test zawiera dokładnie rekordy wstrzymanych celów; reszta dzielona na train/dev."""
    if spec.mode != 'zero_shot':
        raise SplitError(f"split_zero_shot wymaga trybu zero_shot, otrzymano {spec.mode}")
    if len(ds) == 0:
        raise SplitError("Nie można podzielić pustego zbioru")
    targets = set(ds.targets())
    held_out = set(spec.held_out_targets)
    unknown = held_out - targets
    if unknown:
        raise SplitError(f"Nieznane cele do wstrzymania: {sorted(unknown)}")
    if held_out >= targets:
        raise SplitError("Wstrzymane cele obejmują wszystkie cele - zbiór treningowy byłby pusty")
    test = [i for i, r in enumerate(ds.records) if r.target in held_out]
    rest = [i for i, r in enumerate(ds.records) if r.target not in held_out]
    r_train, r_dev = spec.ratios[0], spec.ratios[1]
    rng = np.random.default_rng(spec.seed)
    train, dev = _stratified_split(ds, rest, (r_train / (r_train + r_dev), r_dev / (r_train + r_dev)), rng)
    logger.info(f"Podział zero-shot (wstrzymane: {sorted(held_out)}): "
                f"train={len(train)}, dev={len(dev)}, test={len(test)}")
    return ds.subset(train), ds.subset(dev), ds.subset(test)


def split_dataset(ds: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset, Dataset]:
    if spec.mode == 'zero_shot':
        return split_zero_shot(ds, spec)
    return split_in_target(ds, spec)


# --- dane syntetyczne ---

def _unit(vec: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(vec)
    return vec / n if n > 0 else vec


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Generuje zbiór, w którym sygnał klasy siedzi w wybranej modalności."""
    rng = np.random.default_rng(cfg.seed)
    prompt = _unit(rng.standard_normal(cfg.d_text))
    directions = {}
    for target in cfg.targets:
        for label in range(cfg.n_classes):
            directions[(target, label)] = (_unit(rng.standard_normal(cfg.d_text)),
                                           _unit(rng.standard_normal(cfg.d_visual)))

    simple_modes = ('text_dominant', 'visual_dominant', 'shared')
    records = []
    for target in cfg.targets:
        for label in range(cfg.n_classes):
            dir_text, dir_visual = directions[(target, label)]
            for i in range(cfg.n_per_class_per_target):
                mode = cfg.dominance if cfg.dominance != 'mixed' else simple_modes[int(rng.integers(3))]
                noise_text = rng.standard_normal(cfg.d_text)
                noise_visual = rng.standard_normal(cfg.d_visual)
                if mode in ('text_dominant', 'shared'):
                    e_text = dir_text + cfg.noise_sigma * noise_text
                else:
                    e_text = noise_text
                if mode in ('visual_dominant', 'shared'):
                    e_visual = dir_visual + cfg.noise_sigma * noise_visual
                else:
                    e_visual = noise_visual
                records.append(EmbeddingRecord(
                    id=f"{target}-{label}-{i:05d}",
                    target=target,
                    label=label,
                    e_text=_unit(e_text).astype(STORAGE_DTYPE),
                    e_visual=_unit(e_visual).astype(STORAGE_DTYPE),
                    meta={'mode': mode},
                ))
    ds = Dataset(records, cfg.d_text, cfg.d_visual, prompt.astype(STORAGE_DTYPE))
    counts = Counter(r.meta['mode'] for r in records)
    logger.info(f"Wygenerowano {len(ds)} rekordów syntetycznych ({cfg.dominance}): {dict(counts)}")
    return ds
