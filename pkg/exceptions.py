# exceptions.py
from typing import Optional, Tuple

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class DimeError(Exception):
    """Bazowa klasa dla wyjątków biblioteki."""
    pass

class TensorError(DimeError):
    """Błędy związane z tensorami i grafem obliczeń."""
    pass

class DimensionError(TensorError):
    """Niezgodne wymiary tensorów."""

    def __init__(self, message: str, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)

class ParameterError(TensorError):
    """Nieprawidłowy parametr operacji (np. temperatura <= 0)."""
    pass

class InputError(TensorError):
    """Nieprawidłowe dane wejściowe (np. wartości nieskończone)."""

    def __init__(self, message: str, record_id: Optional[str] = None):
        super().__init__(message)
        self.record_id = record_id

class UsageError(TensorError):
    """Nieprawidłowe użycie API (np. backward z nieskalarnego tensora)."""
    pass

class ConfigError(DimeError):
    """Błędy konfiguracji."""
    pass

class DatasetError(DimeError):
    """Błędy związane ze zbiorami danych."""
    pass

class DatasetFormatError(DatasetError):
    """Uszkodzona linia pliku zbioru danych."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        if line_no is not None:
            message = f"linia {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no

class RecordError(DatasetError):
    """Rekord łamie niezmienniki zbioru."""

    def __init__(self, message: str, record_id: Optional[str] = None):
        if record_id is not None:
            message = f"rekord '{record_id}': {message}"
        super().__init__(message)
        self.record_id = record_id

class SplitError(DatasetError):
    """Nie da się wykonać podziału zbioru."""
    pass

class NumericalError(DimeError):
    """Strata lub gradient przestały być skończone."""

    def __init__(self, message: str, epoch: Optional[int] = None, batch: Optional[int] = None):
        if epoch is not None:
            message = f"{message} (epoka {epoch}, batch {batch})"
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch

class CheckpointError(DimeError):
    """Błąd podczas zapisu/odczytu checkpointu."""
    pass

class CheckpointCorruptedError(CheckpointError):
    """Plik checkpointu jest uszkodzony."""

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} (offset {offset})"
        super().__init__(message)
        self.offset = offset

class CheckpointVersionMismatchError(CheckpointError):
    """Niezgodna wersja formatu checkpointu."""
    pass


def handle_dime_error(error: Exception) -> Tuple[str, int]:
    """Konwertuje wyjątki na komunikat dla użytkownika i kod wyjścia."""
    error_codes = {
        UsageError: ("Nieprawidłowe użycie", EXIT_USAGE),
        ConfigError: ("Błąd konfiguracji", EXIT_USAGE),
        DimensionError: ("Niezgodne wymiary", EXIT_DATA),
        DatasetError: ("Błąd danych", EXIT_DATA),
        CheckpointError: ("Błąd checkpointu", EXIT_DATA),
        InputError: ("Błąd danych wejściowych", EXIT_DATA),
        NumericalError: ("Błąd numeryczny", EXIT_NUMERIC),
        ParameterError: ("Nieprawidłowy parametr", EXIT_USAGE),
    }

    # pierwsze dopasowanie wygrywa
    for error_type, (prefix, code) in error_codes.items():
        if isinstance(error, error_type):
            return f"{prefix}: {error}", code

    if isinstance(error, OSError):
        return f"Błąd wejścia/wyjścia: {error}", EXIT_DATA
    return str(error), EXIT_USAGE
