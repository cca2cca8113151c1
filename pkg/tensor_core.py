# tensor_core.py
import math
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import ndtr

from exceptions import DimensionError, InputError, ParameterError, UsageError

logger = logging.getLogger(__name__)

NON_DIFFERENTIABLE = "non-differentiable point, skipped"

_PRECISIONS = {'f32': np.float32, 'f64': np.float64}
_default_dtype = np.float64

ArrayLike = Union['Tensor', np.ndarray, float, int, Sequence]


def set_default_dtype(dtype) -> None:
    """Ustawia domyślną precyzję nowych tensorów (float32 lub float64)."""
    global _default_dtype
    if isinstance(dtype, str) and dtype in _PRECISIONS:
        dtype = _PRECISIONS[dtype]
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ParameterError(f"Nieobsługiwany typ danych: {dtype}")
    _default_dtype = dtype.type


def get_default_dtype():
    return _default_dtype


def dtype_for_precision(precision: str):
    """Zamienia nazwę precyzji ('f32'/'f64') na typ numpy."""
    try:
        return _PRECISIONS[precision]
    except KeyError:
        raise ParameterError(f"Nieznana precyzja: {precision}") from None


class Tensor:
    """Gęsta tablica liczb rzeczywistych z informacją potrzebną do liczenia gradientów."""

    __slots__ = ('data', 'grad', 'requires_grad', 'op', '_parents', '_backward', '_kink')

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None,
                 _parents: Tuple['Tensor', ...] = (), op: str = ''):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, (np.ndarray, np.generic)) and data.dtype.kind == 'f':
                dtype = data.dtype
            else:
                dtype = _default_dtype
        self.data: np.ndarray = np.asarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = _parents
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        # wzorzec strony "załamania" (relu, clamp, clip, norma w zerze)
        self._kink: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError("item() wymaga tensora z jednym elementem", self.data.shape)
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> 'Tensor':
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}, op='{self.op}')"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return tensor_mean(self, axis, keepdims)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> 'Tensor':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self) -> 'Tensor':
        return transpose(self, None)


def parameter(data: np.ndarray, dtype=None) -> Tensor:
    """Tworzy uczony parametr (liść grafu wymagający gradientu)."""
    arr = np.ascontiguousarray(np.array(data, dtype=dtype or _default_dtype))
    return Tensor(arr, requires_grad=True)


def constant(data: ArrayLike, dtype=None) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, dtype=dtype)


def _lift(x: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=like.dtype if like is not None else None)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, size in enumerate(shape):
        if size == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad.reshape(shape)


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    grad = _unbroadcast(np.asarray(grad), t.data.shape)
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def _record(data: np.ndarray, parents: Tuple[Tensor, ...], backward: Callable[[np.ndarray], None],
            op: str, kink: Optional[np.ndarray] = None) -> Tensor:
    needs_grad = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs_grad, _parents=parents if needs_grad else (), op=op)
    if needs_grad:
        out._backward = backward
        out._kink = kink
    return out


def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# --- arytmetyka elementarna ---

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)

    def _backward(g):
        _accumulate(a, g)
        _accumulate(b, g)
    return _record(a.data + b.data, (a, b), _backward, 'add')


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)

    def _backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)
    return _record(a.data - b.data, (a, b), _backward, 'sub')


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)

    def _backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)
    return _record(a.data * b.data, (a, b), _backward, 'mul')


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)

    def _backward(g):
        _accumulate(a, g / b.data)
        _accumulate(b, -g * a.data / (b.data * b.data))
    return _record(a.data / b.data, (a, b), _backward, 'div')


def neg(a: Tensor) -> Tensor:
    def _backward(g):
        _accumulate(a, -g)
    return _record(-a.data, (a,), _backward, 'neg')


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Iloczyn macierzowy z obsługą wymiarów wsadowych (b może być zwykłą macierzą)."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul: niezgodne wymiary wewnętrzne", a.shape, b.shape)
    if a.ndim == 1:
        if b.ndim != 2:
            raise DimensionError("matmul: wektor można mnożyć tylko przez macierz", a.shape, b.shape)
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), (b.shape[1],))

    def _backward(g):
        _accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        _accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), g))
    return _record(np.matmul(a.data, b.data), (a, b), _backward, 'matmul')


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x·Wᵀ + b, gdzie W ma kształt (wyjście × wejście)."""
    if x.shape[-1] != weight.shape[-1]:
        raise DimensionError("linear: wymiar wejścia nie pasuje do macierzy wag", x.shape, weight.shape)
    out = matmul(x, transpose(weight, None))
    return out + bias if bias is not None else out


# --- redukcje i kształty ---

def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes) if axes else g
        _accumulate(x, np.broadcast_to(g, x.shape))
    return _record(np.sum(x.data, axis=axes, keepdims=keepdims), (x,), _backward, 'sum')


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    return tensor_sum(x, axes, keepdims) * (1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    def _backward(g):
        _accumulate(x, g.reshape(x.shape))
    return _record(x.data.reshape(shape), (x,), _backward, 'reshape')


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def _backward(g):
        _accumulate(x, np.transpose(g, inverse))
    return _record(np.transpose(x.data, axes), (x,), _backward, 'transpose')


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, slice, type(Ellipsis))) or p is None for p in parts)


def getitem(x: Tensor, idx) -> Tensor:
    basic = _is_basic_index(idx)

    def _backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        _accumulate(x, full)
    return _record(x.data[idx], (x,), _backward, 'getitem')


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis):
            raise DimensionError("concat: niezgodne kształty", tensors[0].shape, t.shape)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        for t, part in zip(tensors, np.split(g, bounds, axis=axis)):
            _accumulate(t, part)
    return _record(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), _backward, 'concat')


# --- funkcje elementarne ---

def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)

    def _backward(g):
        _accumulate(x, g * y)
    return _record(y, (x,), _backward, 'exp')


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise InputError("log: argument musi być dodatni")

    def _backward(g):
        _accumulate(x, g / x.data)
    return _record(np.log(x.data), (x,), _backward, 'log')


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise InputError("sqrt: argument musi być nieujemny")
    y = np.sqrt(x.data)

    def _backward(g):
        _accumulate(x, g * 0.5 / y)
    return _record(y, (x,), _backward, 'sqrt')


def relu(x: Tensor) -> Tensor:
    """max(0, x); subgradient w zerze wynosi 0."""
    active = x.data > 0

    def _backward(g):
        _accumulate(x, g * active)
    return _record(np.where(active, x.data, 0.0).astype(x.dtype), (x,), _backward, 'relu', kink=active)


def gelu(x: Tensor) -> Tensor:
    """Dokładna postać x·Φ(x) (bez przybliżenia tanh)."""
    cdf = ndtr(x.data).astype(x.dtype)
    pdf = (np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)).astype(x.dtype)

    def _backward(g):
        _accumulate(x, g * (cdf + x.data * pdf))
    return _record(x.data * cdf, (x,), _backward, 'gelu')


def activation(kind: str, x: Tensor) -> Tensor:
    if kind == 'relu':
        return relu(x)
    if kind == 'gelu':
        return gelu(x)
    raise ParameterError(f"Nieznana funkcja aktywacji: {kind}")


def clamp_min(x: Tensor, low: float) -> Tensor:
    above = x.data > low

    def _backward(g):
        _accumulate(x, g * above)
    return _record(np.maximum(x.data, low).astype(x.dtype), (x,), _backward, 'clamp_min', kink=above)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    inside = (x.data > low) & (x.data < high)
    side = (x.data > low).astype(np.int8) + 2 * (x.data < high).astype(np.int8)

    def _backward(g):
        _accumulate(x, g * inside)
    return _record(np.clip(x.data, low, high).astype(x.dtype), (x,), _backward, 'clip', kink=side)


def norm(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Norma euklidesowa wzdłuż osi; w zerze przyjmujemy gradient 0."""
    n = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    positive = n > 0
    unit = np.divide(x.data, n, out=np.zeros_like(x.data), where=positive)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, g * unit)
    out = n if keepdims else np.squeeze(n, axis=axis)
    return _record(out, (x,), _backward, 'norm', kink=positive)


# --- operacje modelu ---

def softmax_with_temperature(z: Tensor, tau: float = 1.0, axis: int = -1) -> Tensor:
    """softmax(z/tau) liczony z odjęciem maksimum."""
    z = _lift(z)
    if not np.isfinite(tau) or tau <= 0:
        raise ParameterError(f"Temperatura musi być dodatnia, otrzymano {tau}")
    tau = float(tau)
    if z.data.size == 0:
        raise InputError("softmax: pusty wektor")
    if not np.all(np.isfinite(z.data)):
        raise InputError("softmax: wartości nieskończone lub NaN na wejściu")
    scaled = z.data / tau
    e = np.exp(scaled - np.max(scaled, axis=axis, keepdims=True))
    y = e / np.sum(e, axis=axis, keepdims=True)

    def _backward(g):
        _accumulate(z, y * (g - np.sum(g * y, axis=axis, keepdims=True)) / tau)
    return _record(y, (z,), _backward, 'softmax')


def log_softmax(z: Tensor, axis: int = -1) -> Tensor:
    m = np.max(z.data, axis=axis, keepdims=True)
    lse = m + np.log(np.sum(np.exp(z.data - m), axis=axis, keepdims=True))
    y = z.data - lse

    def _backward(g):
        _accumulate(z, g - np.exp(y) * np.sum(g, axis=axis, keepdims=True))
    return _record(y, (z,), _backward, 'log_softmax')


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """(x − średnia)/sqrt(wariancja + eps)·gamma + beta po ostatniej osi (wariancja populacyjna)."""
    if eps <= 0:
        raise ParameterError(f"eps musi być dodatni, otrzymano {eps}")
    if gamma.shape[-1] != x.shape[-1] or beta.shape[-1] != x.shape[-1]:
        raise DimensionError("layer_norm: niezgodne kształty", x.shape, gamma.shape)
    centered = x - tensor_mean(x, -1, keepdims=True)
    var = tensor_mean(centered * centered, -1, keepdims=True)
    return centered / sqrt(var + eps) * gamma + beta


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Odwrócony dropout: w trybie ewaluacji zwraca wejście bez zmian."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"Prawdopodobieństwo dropoutu poza zakresem [0, 1): {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise UsageError("dropout w trybie treningu wymaga generatora losowego")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return x * Tensor(mask)


def l2_normalize(x: Tensor, eps: float = 1e-12, axis: int = -1) -> Tensor:
    """x / max(‖x‖, eps); wektor zerowy pozostaje zerowy."""
    if eps <= 0:
        raise ParameterError(f"eps musi być dodatni, otrzymano {eps}")
    return x / clamp_min(norm(x, axis=axis, keepdims=True), eps)


def euclidean_distance(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise DimensionError("euclidean_distance: różne kształty", a.shape, b.shape)
    return norm(a - b, axis=-1)


def cosine_similarity(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise DimensionError("cosine_similarity: różne kształty", a.shape, b.shape)
    dot = tensor_sum(a * b, -1)
    denom = clamp_min(norm(a, axis=-1), eps) * clamp_min(norm(b, axis=-1), eps)
    return clip(dot / denom, -1.0, 1.0)


def cross_entropy_loss(logits: Tensor, labels: Sequence[int],
                       record_ids: Optional[Sequence[str]] = None) -> Tensor:
    """Średnia po batchu z −log softmax(logits)[etykieta], liczona przez log-sum-exp."""
    if logits.ndim == 1:
        logits = reshape(logits, (1, logits.shape[0]))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n_batch, n_classes = logits.shape
    if labels.shape[0] != n_batch or n_batch < 1:
        raise DimensionError("cross_entropy_loss: liczba etykiet różna od rozmiaru batcha",
                             logits.shape, labels.shape)
    bad = np.flatnonzero((labels < 0) | (labels >= n_classes))
    if bad.size:
        i = int(bad[0])
        who = record_ids[i] if record_ids is not None else f"#{i}"
        raise InputError(f"Etykieta {labels[i]} poza zakresem [0, {n_classes}) w rekordzie {who}", record_id=who)
    picked = getitem(log_softmax(logits, axis=-1), (np.arange(n_batch), labels))
    return neg(tensor_mean(picked))


# --- taśma i wsteczna propagacja ---

class Tape:
    """Zapisane operacje w porządku topologicznym (wejścia przed wyjściami)."""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> 'Tape':
        order: List[Tensor] = []
        visited = {id(root)}
        stack = [(root, iter(root._parents))]
        while stack:
            node, parents = stack[-1]
            for parent in parents:
                if id(parent) not in visited:
                    visited.add(id(parent))
                    stack.append((parent, iter(parent._parents)))
                    break
            else:
                stack.pop()
                order.append(node)
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def kink_signature(self) -> bytes:
        return b''.join(n._kink.tobytes() for n in self.nodes if n._kink is not None)

    def replay(self) -> None:
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def backward(root: Tensor) -> None:
    """Akumuluje dL/dθ w każdym przodku korzenia wymagającym gradientu."""
    if root.data.size != 1:
        raise UsageError(f"backward wymaga skalarnego korzenia, otrzymano kształt {root.shape}")
    if not root.requires_grad:
        raise UsageError("Korzeń nie zależy od żadnego parametru")
    tape = Tape.from_root(root)
    for node in tape.nodes:
        if node._parents:
            node.grad = None
    root.grad = np.ones_like(root.data)
    tape.replay()


def zero_grad(params: Dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


# --- sprawdzanie gradientów ---

@dataclass
class ParamCheck:
    """Wynik sprawdzenia jednego parametru."""
    name: str
    max_rel_err: float = 0.0
    n_checked: int = 0
    n_skipped: int = 0
    worst_index: Optional[Tuple[int, ...]] = None
    skipped: List[str] = field(default_factory=list)


@dataclass
class GradCheckReport:
    tol: float
    entries: Dict[str, ParamCheck] = field(default_factory=dict)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries.values()), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.max_rel_err < self.tol for e in self.entries.values())

    def failing(self) -> List[str]:
        return [name for name, e in self.entries.items() if not e.max_rel_err < self.tol]

    def group_errors(self, groups: Dict[str, List[str]]) -> Dict[str, float]:
        """Maksymalny błąd względny w każdej grupie parametrów."""
        return {group: max((self.entries[n].max_rel_err for n in names if n in self.entries), default=0.0)
                for group, names in groups.items()}


def relative_error(analytic: float, numeric: float, floor: float = 1e-4) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(build: Callable[[], Tensor], params: Dict[str, Tensor], tol: float = 1e-4,
                    h: float = 1e-5, max_elements: Optional[int] = None,
                    rel_floor: float = 1e-4) -> GradCheckReport:
    """Porównuje gradienty z taśmy z różnicami centralnymi.

    Wpisy, których zaburzenie o ±h zmienia stronę dowolnego załamania (relu, zawias,
    clamp, clip, norma w zerze), są pomijane jako punkty nieróżniczkowalne.
    """
    zero_grad(params)
    loss = build()
    if loss.data.size != 1:
        raise UsageError(f"check_gradients wymaga skalarnej straty, otrzymano kształt {loss.shape}")
    if loss.dtype != np.float64:
        logger.warning("Sprawdzanie gradientów w precyzji innej niż float64 - tolerancje mogą być nieosiągalne")
    backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}
    base_signature = Tape.from_root(loss).kink_signature()

    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        entry = ParamCheck(name=name)
        total = p.data.size
        if max_elements is not None and total > max_elements:
            flat_indices = np.unique(np.linspace(0, total - 1, max_elements).astype(np.int64))
        else:
            flat_indices = np.arange(total)
        for flat in flat_indices:
            idx = np.unravel_index(int(flat), p.data.shape)
            original = p.data[idx].copy()
            p.data[idx] = original + h
            plus = build()
            p.data[idx] = original - h
            minus = build()
            p.data[idx] = original
            if (Tape.from_root(plus).kink_signature() != base_signature
                    or Tape.from_root(minus).kink_signature() != base_signature):
                entry.n_skipped += 1
                entry.skipped.append(f"{name}{tuple(int(i) for i in idx)}: {NON_DIFFERENTIABLE}")
                continue
            numeric = (plus.item() - minus.item()) / (2.0 * h)
            err = relative_error(float(analytic[name][idx]), numeric, rel_floor)
            entry.n_checked += 1
            if err > entry.max_rel_err or entry.worst_index is None:
                entry.max_rel_err = max(err, entry.max_rel_err)
                entry.worst_index = tuple(int(i) for i in idx)
        if entry.n_skipped:
            logger.info(f"{name}: pominięto {entry.n_skipped} wpisów ({NON_DIFFERENTIABLE})")
        report.entries[name] = entry
    zero_grad(params)
    return report
