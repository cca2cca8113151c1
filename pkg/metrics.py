# metrics.py
import csv
import io
import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from data_io import LABEL_NAMES
from exceptions import DimensionError, InputError

logger = logging.getLogger(__name__)

N_CLASSES = len(LABEL_NAMES)
GATE_COLUMNS = ('mean_pi_t', 'mean_pi_v', 'mean_pi_tv')


@dataclass
class ConfusionMatrix:
    """Macierz pomyłek 3×3 indeksowana [złota][przewidziana]."""
    counts: np.ndarray = field(default_factory=lambda: np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: 'ConfusionMatrix') -> 'ConfusionMatrix':
        return ConfusionMatrix(self.counts + other.counts)

    def to_list(self) -> List[List[int]]:
        return self.counts.tolist()


def _as_labels(values: Sequence[int], what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.int64).reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() >= N_CLASSES):
        raise InputError(f"{what}: etykiety muszą należeć do {{0, 1, 2}}")
    return arr


def confusion_matrix(gold: Sequence[int], pred: Sequence[int]) -> ConfusionMatrix:
    gold_arr, pred_arr = _as_labels(gold, 'gold'), _as_labels(pred, 'pred')
    if gold_arr.shape != pred_arr.shape:
        raise DimensionError("Liczba etykiet złotych i przewidzianych różni się", gold_arr.shape, pred_arr.shape)
    counts = np.bincount(gold_arr * N_CLASSES + pred_arr, minlength=N_CLASSES * N_CLASSES)
    return ConfusionMatrix(counts.reshape(N_CLASSES, N_CLASSES).astype(np.int64))


@dataclass
class F1Breakdown:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    absent_classes: List[int]

    @property
    def macro_f1(self) -> float:
        return float(np.mean(self.f1))


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def breakdown_from_confusion(cm: ConfusionMatrix) -> F1Breakdown:
    """P, R i F1 dla każdej klasy; zerowy mianownik daje 0."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    predicted = counts.sum(axis=0)
    actual = counts.sum(axis=1)
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, actual)
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    absent = [c for c in range(N_CLASSES) if predicted[c] == 0 and actual[c] == 0]
    return F1Breakdown(precision=precision, recall=recall, f1=f1, absent_classes=absent)


def f1_breakdown(gold: Sequence[int], pred: Sequence[int]) -> F1Breakdown:
    return breakdown_from_confusion(confusion_matrix(gold, pred))


def macro_f1(gold: Sequence[int], pred: Sequence[int]) -> float:
    """Średnia nieważona F1 po trzech klasach; klasa nieobecna wnosi 0 (z ostrzeżeniem)."""
    breakdown = f1_breakdown(gold, pred)
    if breakdown.absent_classes:
        names = [LABEL_NAMES[c] for c in breakdown.absent_classes]
        logger.warning(f"Klasy nieobecne w etykietach złotych i przewidzianych: {names} (F1 = 0)")
    return breakdown.macro_f1


@dataclass
class TargetScore:
    target: str
    n: int
    macro_f1: float
    confusion: ConfusionMatrix
    mean_gate: Optional[np.ndarray] = None


@dataclass
class EvalReport:
    """Wyniki ewaluacji: macro-F1 per cel, średnia "Avg." i wynik łączny."""
    per_target: Dict[str, TargetScore]
    avg_macro_f1: float
    pooled_macro_f1: float
    confusion: ConfusionMatrix
    mean_gate: Optional[np.ndarray] = None
    n_records: int = 0

    def _gate_cells(self, gate: Optional[np.ndarray]) -> List[str]:
        cells = ['' for _ in GATE_COLUMNS]
        if gate is not None:
            for k, value in enumerate(gate):
                cells[k] = f"{value:.6f}"
        return cells

    def table_rows(self) -> List[List[str]]:
        rows = []
        for name, score in self.per_target.items():
            rows.append([name, str(score.n), f"{score.macro_f1:.6f}"] + self._gate_cells(score.mean_gate))
        rows.append(['Avg.', str(self.n_records), f"{self.avg_macro_f1:.6f}"] + self._gate_cells(self.mean_gate))
        rows.append(['pooled', str(self.n_records), f"{self.pooled_macro_f1:.6f}"] + self._gate_cells(self.mean_gate))
        return rows

    @staticmethod
    def table_header() -> List[str]:
        return ['target', 'n', 'macro_f1'] + list(GATE_COLUMNS)

    def to_table(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, delimiter='\t', lineterminator='\n')
        writer.writerow(self.table_header())
        writer.writerows(self.table_rows())
        return buf.getvalue()

    def to_jsonl(self) -> str:
        """Jedna linia na cel, potem linia podsumowania."""
        lines = []
        for name, score in self.per_target.items():
            lines.append(json.dumps({
                'kind': 'target', 'target': name, 'n': score.n, 'macro_f1': score.macro_f1,
                'confusion': score.confusion.to_list(),
                'mean_gate': score.mean_gate.tolist() if score.mean_gate is not None else None,
            }, ensure_ascii=False))
        lines.append(json.dumps({
            'kind': 'summary', 'n': self.n_records, 'avg_macro_f1': self.avg_macro_f1,
            'pooled_macro_f1': self.pooled_macro_f1, 'confusion': self.confusion.to_list(),
            'mean_gate': self.mean_gate.tolist() if self.mean_gate is not None else None,
        }, ensure_ascii=False))
        return '\n'.join(lines) + '\n'

    def format_console(self) -> str:
        lines = [f"{'cel':<16}{'n':>7}{'macro-F1':>11}   pi (t / v / tv)"]
        for name, score in self.per_target.items():
            lines.append(f"{name:<16}{score.n:>7}{score.macro_f1 * 100:>10.2f}   {_format_gate(score.mean_gate)}")
        lines.append(f"{'Avg.':<16}{self.n_records:>7}{self.avg_macro_f1 * 100:>10.2f}   {_format_gate(self.mean_gate)}")
        lines.append(f"{'(łącznie)':<16}{self.n_records:>7}{self.pooled_macro_f1 * 100:>10.2f}")
        return '\n'.join(lines)


def _format_gate(gate: Optional[np.ndarray]) -> str:
    if gate is None:
        return '-'
    return ' / '.join(f"{g:.3f}" for g in gate)


def per_target_report(targets: Sequence[str], gold: Sequence[int], preds: Sequence[int],
                      gates: Optional[np.ndarray] = None) -> EvalReport:
    """Macro-F1 w obrębie każdego celu; "Avg." to nieważona średnia po celach."""
    targets = list(targets)
    gold_arr, pred_arr = _as_labels(gold, 'gold'), _as_labels(preds, 'pred')
    if not (len(targets) == gold_arr.size == pred_arr.size):
        raise DimensionError("Liczby celów, etykiet i predykcji muszą być równe",
                             (len(targets),), gold_arr.shape, pred_arr.shape)
    if gates is not None:
        gates = np.asarray(gates, dtype=np.float64)
        if gates.ndim != 2 or gates.shape[0] != len(targets):
            raise DimensionError("Wagi bramki muszą mieć kształt (n, k)", gates.shape)

    per_target: Dict[str, TargetScore] = OrderedDict()
    target_arr = np.asarray(targets, dtype=object)
    for name in sorted(set(targets)):
        mask = target_arr == name
        cm = confusion_matrix(gold_arr[mask], pred_arr[mask])
        per_target[name] = TargetScore(
            target=name, n=int(mask.sum()),
            macro_f1=macro_f1(gold_arr[mask], pred_arr[mask]),
            confusion=cm,
            mean_gate=gates[mask].mean(axis=0) if gates is not None else None,
        )

    avg = float(np.mean([s.macro_f1 for s in per_target.values()])) if per_target else 0.0
    pooled = macro_f1(gold_arr, pred_arr) if gold_arr.size else 0.0
    return EvalReport(
        per_target=per_target, avg_macro_f1=avg, pooled_macro_f1=pooled,
        confusion=confusion_matrix(gold_arr, pred_arr),
        mean_gate=gates.mean(axis=0) if gates is not None and len(targets) else None,
        n_records=len(targets),
    )


def report_for_records(records, preds: Sequence[int], gates: Optional[np.ndarray] = None) -> EvalReport:
    return per_target_report([r.target for r in records], [r.label for r in records], preds, gates)
