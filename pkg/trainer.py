# trainer.py
import logging
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from data_io import Dataset
from events import EARLY_STOP, EPOCH_END, NEW_BEST, EventManager
from exceptions import ConfigError, DatasetError, InputError, NumericalError
from metrics import EvalReport, macro_f1, report_for_records
from model import DimeModel
from save_load import Checkpoint, write_table
from tensor_core import Tensor, backward, dtype_for_precision

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ('epoch', 'L_T', 'L_V', 'L_S', 'L_CE', 'L_total', 'dev_macro_f1',
                   'mean_pi_t', 'mean_pi_v', 'mean_pi_tv', 'wall_time')


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 32
    max_epochs: int = 15
    patience: int = 5
    seed: int = 0
    precision: str = 'f32'
    clip_norm: Optional[float] = 5.0
    workers: int = 1

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.lr < 0:
            raise ConfigError(f"lr musi być nieujemne, otrzymano {self.lr}")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError(f"betas muszą należeć do [0, 1): {self.betas}")
        if self.eps <= 0:
            raise ConfigError("eps musi być dodatnie")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay musi być nieujemne, otrzymano {self.weight_decay}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs i patience muszą być dodatnie")
        if self.precision not in ('f32', 'f64'):
            raise ConfigError(f"Nieznana precyzja: {self.precision}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm musi być dodatnie lub None")
        if self.workers < 1:
            raise ConfigError("workers musi być >= 1")


class Adam:
    """Adam z opcjonalnym L2 (dodawanym do gradientu)."""

    def __init__(self, params: Dict[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1 ** t
        bias2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)


def clip_global_norm(params: Dict[str, Tensor], max_norm: Optional[float]) -> float:
    """Przycina gradienty do globalnej normy max_norm; zwraca normę sprzed przycięcia."""
    grads = [p.grad for p in params.values() if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * np.asarray(scale, dtype=p.grad.dtype)
    return total


@dataclass
class Prediction:
    ids: List[str]
    logits: np.ndarray
    probs: np.ndarray
    pi: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.probs, axis=-1)


def _predict_chunk(model: DimeModel, ds: Dataset, indices: List[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    trace = model.forward(ds.to_batch(indices, dtype=model.dtype), training=False)
    return trace.logits.data.copy(), trace.probs.data.copy(), trace.pi.data.copy()


def predict(model: DimeModel, ds: Dataset, batch_size: int = 256, workers: int = 1) -> Prediction:
    """Deterministyczny przebieg w trybie ewaluacji; wyniki łączone w kolejności rekordów."""
    if len(ds) == 0:
        raise DatasetError("Nie można ewaluować pustego zbioru")
    chunks = [list(range(start, min(start + batch_size, len(ds)))) for start in range(0, len(ds), batch_size)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda idx: _predict_chunk(model, ds, idx), chunks))
    else:
        results = [_predict_chunk(model, ds, idx) for idx in chunks]
    return Prediction(ids=ds.ids,
                      logits=np.concatenate([r[0] for r in results]),
                      probs=np.concatenate([r[1] for r in results]),
                      pi=np.concatenate([r[2] for r in results]))


def evaluate(model: DimeModel, ds: Dataset, batch_size: int = 256, workers: int = 1) -> EvalReport:
    prediction = predict(model, ds, batch_size, workers)
    return report_for_records(ds.records, prediction.labels, prediction.pi)


def checkpoint_from_model(model: DimeModel, epoch: int, dev_macro_f1: float,
                          rng: Optional[np.random.Generator] = None,
                          train_config: Optional[TrainConfig] = None) -> Checkpoint:
    configs = model.configs()
    if train_config is not None:
        configs['train'] = asdict(train_config)
    return Checkpoint(params=model.state_dict(), configs=configs,
                      rng_state=rng.bit_generator.state if rng is not None else {},
                      epoch=epoch, dev_macro_f1=float(dev_macro_f1))


def model_from_checkpoint(ckpt: Checkpoint) -> DimeModel:
    model = DimeModel.from_configs(ckpt.configs)
    model.load_state_dict(ckpt.params)
    return model


@dataclass
class EpochRecord:
    epoch: int
    losses: Dict[str, float]
    dev_macro_f1: float
    mean_pi: np.ndarray
    wall_time: float

    def row(self) -> List[Any]:
        gate = list(self.mean_pi) + [float('nan')] * (3 - len(self.mean_pi))
        return [self.epoch] + [self.losses[k] for k in ('L_T', 'L_V', 'L_S', 'L_CE', 'L_total')] \
            + [self.dev_macro_f1] + gate + [self.wall_time]


def write_history(history: List[EpochRecord], path) -> None:
    write_table(path, HISTORY_COLUMNS, [[repr(float(v)) if isinstance(v, float) else v for v in rec.row()]
                                        for rec in history])


def train(model: DimeModel, train_ds: Dataset, dev_ds: Dataset, cfg: TrainConfig,
          events: Optional[EventManager] = None) -> Tuple[Checkpoint, List[EpochRecord]]:
    """Minimalizuje L_total Adamem, wybiera epokę o najlepszym dev macro-F1 (remis: wcześniejsza).

    Po powrocie model ma parametry najlepszego checkpointu.
    """
    if len(train_ds) == 0 or len(dev_ds) == 0:
        raise DatasetError("Zbiory treningowy i walidacyjny muszą być niepuste")
    if dtype_for_precision(cfg.precision) != model.dtype:
        logger.warning(f"Precyzja treningu {cfg.precision} różni się od precyzji modelu "
                       f"{np.dtype(model.dtype).name}; używam precyzji modelu")

    events = events or EventManager()
    params = model.named_parameters()
    optimizer = Adam(params, cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    history: List[EpochRecord] = []
    best: Optional[Checkpoint] = None
    epochs_without_improvement = 0
    started = time.perf_counter()

    logger.info(f"Trening: {len(train_ds)} rekordów treningowych, {len(dev_ds)} walidacyjnych, "
                f"maks. {cfg.max_epochs} epok, batch {cfg.batch_size}, lr {cfg.lr}")
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_ds))
        sums = OrderedDict((k, 0.0) for k in ('L_T', 'L_V', 'L_S', 'L_CE', 'L_total'))
        n_seen = 0
        for batch_index, start in enumerate(range(0, len(train_ds), cfg.batch_size)):
            indices = order[start:start + cfg.batch_size]
            batch = train_ds.to_batch(indices, dtype=model.dtype)
            model.zero_grad()
            try:
                trace = model.loss(batch, training=True, rng=rng)
            except InputError as e:
                if all(np.all(np.isfinite(p.data)) for p in params.values()):
                    raise
                raise NumericalError(f"Parametry modelu przestały być skończone: {e}",
                                     epoch=epoch, batch=batch_index) from e
            losses = trace.losses()
            if not all(np.isfinite(v) for v in losses.values()):
                raise NumericalError(f"Nieskończona wartość straty: {dict(losses)}", epoch=epoch, batch=batch_index)
            backward(trace.L_total)
            clip_global_norm(params, cfg.clip_norm)
            optimizer.step()
            for k, v in losses.items():
                sums[k] += v * len(batch)
            n_seen += len(batch)

        epoch_losses = OrderedDict((k, v / n_seen) for k, v in sums.items())
        dev_prediction = predict(model, dev_ds, workers=cfg.workers)
        dev_f1 = macro_f1([r.label for r in dev_ds.records], dev_prediction.labels)
        record = EpochRecord(epoch=epoch, losses=epoch_losses, dev_macro_f1=dev_f1,
                             mean_pi=dev_prediction.pi.mean(axis=0),
                             wall_time=time.perf_counter() - started)
        history.append(record)
        logger.info(f"Epoka {epoch}: L_total={epoch_losses['L_total']:.4f} (L_T={epoch_losses['L_T']:.4f}, "
                    f"L_V={epoch_losses['L_V']:.4f}, L_S={epoch_losses['L_S']:.4f}, "
                    f"L_CE={epoch_losses['L_CE']:.4f}), dev macro-F1={dev_f1:.4f}, "
                    f"pi={np.round(record.mean_pi, 3).tolist()}")
        events.emit(EPOCH_END, record=record)

        if best is None or dev_f1 > best.dev_macro_f1:
            best = checkpoint_from_model(model, epoch, dev_f1, rng, cfg)
            epochs_without_improvement = 0
            events.emit(NEW_BEST, epoch=epoch, dev_macro_f1=dev_f1)
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= cfg.patience:
                logger.info(f"Wczesne zatrzymanie po epoce {epoch}: brak poprawy od {cfg.patience} epok")
                events.emit(EARLY_STOP, epoch=epoch)
                break

    model.load_state_dict(best.params)
    logger.info(f"Najlepsza epoka: {best.epoch} (dev macro-F1 {best.dev_macro_f1:.4f})")
    return best, history
