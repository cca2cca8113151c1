# save_load.py

import csv
import hashlib
import io
import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import numpy as np

from exceptions import CheckpointCorruptedError, CheckpointError, CheckpointVersionMismatchError

logger = logging.getLogger(__name__)

MAGIC = b"DIME"
FORMAT_VERSION = 1
DIGEST_SIZE = 32

_DTYPE_CODES = {np.dtype('<f4'): 0, np.dtype('<f8'): 1}
_CODE_DTYPES = {code: dtype for dtype, code in _DTYPE_CODES.items()}

PathLike = Union[str, Path]


# --- zapis atomowy ---

def atomic_write_bytes(path: PathLike, payload: bytes) -> None:
    """Zapisuje plik przez plik tymczasowy i rename - nigdy nie zostawia połowicznego pliku."""
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent or Path('.')))
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode('utf-8'))


def write_json(path: PathLike, data: Any) -> None:
    atomic_write_text(path, json.dumps(data, indent=4, ensure_ascii=False) + '\n')


def write_table(path: PathLike, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    """Zapisuje tabelę rozdzieloną tabulatorami."""
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter='\t', lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def read_table(path: PathLike) -> List[Dict[str, str]]:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        return list(csv.DictReader(f, delimiter='\t'))


# --- checkpoint ---

@dataclass
class Checkpoint:
    """Stan modelu w chwili zapisu: parametry, konfiguracje i stan generatora."""
    params: Dict[str, np.ndarray]
    configs: Dict[str, Any] = field(default_factory=dict)
    rng_state: Dict[str, Any] = field(default_factory=dict)
    epoch: int = 0
    dev_macro_f1: float = 0.0
    format_version: int = FORMAT_VERSION

    def config_digest(self) -> bytes:
        return config_digest(self.configs)


def config_digest(configs: Dict[str, Any]) -> bytes:
    canonical = json.dumps(configs, sort_keys=True, separators=(',', ':'), ensure_ascii=False)
    return hashlib.sha256(canonical.encode('utf-8')).digest()


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    """Koduje checkpoint: nagłówek, metadane JSON, grupy parametrów, suma kontrolna."""
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack('<I', ckpt.format_version))
    out.write(ckpt.config_digest())
    meta = json.dumps({
        'configs': ckpt.configs,
        'rng_state': ckpt.rng_state,
        'epoch': int(ckpt.epoch),
        'dev_macro_f1': float(ckpt.dev_macro_f1),
    }, sort_keys=True, ensure_ascii=False).encode('utf-8')
    out.write(struct.pack('<I', len(meta)))
    out.write(meta)
    out.write(struct.pack('<I', len(ckpt.params)))
    for name, value in ckpt.params.items():
        arr = np.asarray(value)
        dtype = arr.dtype.newbyteorder('<')
        if dtype not in _DTYPE_CODES:
            raise CheckpointError(f"Nieobsługiwany typ parametru {name}: {arr.dtype}")
        encoded_name = name.encode('utf-8')
        out.write(struct.pack('<H', len(encoded_name)))
        out.write(encoded_name)
        out.write(struct.pack('<BB', _DTYPE_CODES[dtype], arr.ndim))
        out.write(struct.pack(f'<{arr.ndim}I', *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    payload = out.getvalue()
    return payload + hashlib.sha256(payload).digest()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.buf):
            raise CheckpointCorruptedError(f"Checkpoint ucięty podczas czytania: {what}", self.offset)
        chunk = self.buf[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(buf: bytes) -> Checkpoint:
    reader = _Reader(buf)
    if reader.take(len(MAGIC), 'magic') != MAGIC:
        raise CheckpointCorruptedError("To nie jest plik checkpointu (złe bajty magiczne)", 0)
    (version,) = reader.unpack('<I', 'wersja formatu')
    if not _check_version_compatibility(version):
        raise CheckpointVersionMismatchError(
            f"Niekompatybilna wersja checkpointu: {version} (obsługiwana: {FORMAT_VERSION})")
    digest = reader.take(DIGEST_SIZE, 'skrót konfiguracji')
    (meta_len,) = reader.unpack('<I', 'długość metadanych')
    meta_offset = reader.offset
    try:
        meta = json.loads(reader.take(meta_len, 'metadane').decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointCorruptedError(f"Nieprawidłowe metadane: {e}", meta_offset) from None
    (n_params,) = reader.unpack('<I', 'liczba parametrów')
    params: Dict[str, np.ndarray] = {}
    for _ in range(n_params):
        (name_len,) = reader.unpack('<H', 'długość nazwy')
        name_offset = reader.offset
        try:
            name = reader.take(name_len, 'nazwa parametru').decode('utf-8')
        except UnicodeDecodeError:
            raise CheckpointCorruptedError("Nieprawidłowa nazwa parametru", name_offset) from None
        code, ndim = reader.unpack('<BB', f'typ parametru {name}')
        if code not in _CODE_DTYPES:
            raise CheckpointCorruptedError(f"Nieznany kod typu {code} parametru {name}", reader.offset - 2)
        shape = reader.unpack(f'<{ndim}I', f'kształt parametru {name}')
        dtype = _CODE_DTYPES[code]
        count = int(np.prod(shape)) if ndim else 1
        raw = reader.take(count * dtype.itemsize, f'wartości parametru {name}')
        params[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder('='))
    payload_end = reader.offset
    stored = reader.take(DIGEST_SIZE, 'suma kontrolna')
    if not _verify_integrity(buf[:payload_end], stored):
        raise CheckpointCorruptedError("Niezgodna suma kontrolna checkpointu", payload_end)
    if reader.offset != len(buf):
        raise CheckpointCorruptedError("Nadmiarowe bajty na końcu checkpointu", reader.offset)
    configs = meta.get('configs', {})
    if config_digest(configs) != digest:
        raise CheckpointCorruptedError("Skrót konfiguracji nie zgadza się z metadanymi", len(MAGIC) + 4)
    return Checkpoint(params=params, configs=configs, rng_state=meta.get('rng_state', {}),
                      epoch=int(meta.get('epoch', 0)), dev_macro_f1=float(meta.get('dev_macro_f1', 0.0)),
                      format_version=version)


def _verify_integrity(payload: bytes, stored_checksum: bytes) -> bool:
    """Sprawdza integralność pliku checkpointu."""
    return hashlib.sha256(payload).digest() == stored_checksum


def _check_version_compatibility(version: int) -> bool:
    return version == FORMAT_VERSION


def save_checkpoint(ckpt: Checkpoint, path: PathLike) -> None:
    atomic_write_bytes(path, encode_checkpoint(ckpt))
    logger.info(f"Checkpoint został zapisany do: {path} (epoka {ckpt.epoch}, dev macro-F1 {ckpt.dev_macro_f1:.4f})")


def load_checkpoint(path: PathLike) -> Checkpoint:
    """Wczytuje checkpoint; przy jakimkolwiek błędzie nie zwraca częściowego stanu."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Nie znaleziono pliku checkpointu: {path}")
    ckpt = decode_checkpoint(path.read_bytes())
    logger.info(f"Wczytano checkpoint z: {path} (epoka {ckpt.epoch})")
    return ckpt
