# events.py
import logging
import sys
from collections import defaultdict
from typing import Callable, DefaultDict, List, Optional, TextIO

from exceptions import UsageError

logger = logging.getLogger(__name__)

EPOCH_END = 'epoch_end'
NEW_BEST = 'new_best'
EARLY_STOP = 'early_stop'
EVENT_TYPES = (EPOCH_END, NEW_BEST, EARLY_STOP)


class EventManager:
    """Rozsyła zdarzenia pętli treningowej do zarejestrowanych słuchaczy."""

    def __init__(self):
        self.listeners: DefaultDict[str, List[Callable]] = defaultdict(list)
        self.failures = 0

    def register_listener(self, event_type: str, callback: Callable) -> Callable[[], None]:
        """Rejestruje słuchacza; zwraca funkcję, która go wyrejestrowuje."""
        if event_type not in EVENT_TYPES:
            raise UsageError(f"Nieznany typ zdarzenia: {event_type}")
        self.listeners[event_type].append(callback)

        def unregister():
            if callback in self.listeners[event_type]:
                self.listeners[event_type].remove(callback)
        return unregister

    def emit(self, event_type: str, **payload) -> int:
        """Wywołuje słuchaczy po kolei i zwraca liczbę udanych wywołań.

        Wyjątek słuchacza jest logowany i liczony w `failures`; trening trwa dalej.
        """
        delivered = 0
        for callback in list(self.listeners.get(event_type, ())):
            try:
                callback(**payload)
                delivered += 1
            except Exception as e:
                self.failures += 1
                logger.error(f"Błąd podczas obsługi zdarzenia {event_type}: {e}")
        return delivered


def progress_printer(max_epochs: int, stream: Optional[TextIO] = None) -> Callable:
    """Słuchacz EPOCH_END wypisujący jedną linię postępu na epokę."""
    def on_epoch_end(record, **_):
        out = stream if stream is not None else sys.stdout
        print(f"Epoka {record.epoch}/{max_epochs}: L_total={record.losses['L_total']:.4f}, "
              f"dev macro-F1={record.dev_macro_f1:.4f}", file=out)
    return on_epoch_end
