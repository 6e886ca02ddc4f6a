import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional

from kslab.models import DiagnosticsRecord
from kslab.utils.output_writer import format_row


@dataclass
class QueuedRecord:
    """A diagnostics record waiting for its sink"""
    run_id: str
    record: DiagnosticsRecord
    callback: Optional[Callable[[DiagnosticsRecord], None]] = None  # called after delivery


class DiagnosticsQueue:
    """Buffered hand-off between the stepping loop and a diagnostics sink.

    ``add_record`` only appends; delivery happens in batches of
    ``flush_every`` records and on ``close``.
    """

    def __init__(self, run_id: str = "run", flush_every: int = 32):
        self.run_id = run_id
        self.flush_every = max(1, int(flush_every))
        self.queue: deque[QueuedRecord] = deque()
        self.delivered = 0
        self.is_flushing = False

    def add_record(self, record: DiagnosticsRecord,
                   callback: Optional[Callable[[DiagnosticsRecord], None]] = None) -> None:
        self.queue.append(QueuedRecord(self.run_id, record, callback))
        if len(self.queue) >= self.flush_every:
            self.flush()

    def flush(self) -> None:
        if self.is_flushing or not self.queue:
            return

        self.is_flushing = True
        try:
            batch: List[QueuedRecord] = []
            while self.queue:
                batch.append(self.queue.popleft())
            try:
                self._write_batch(batch)
            except Exception as e:
                logging.error(f"Failed to deliver {len(batch)} diagnostics records "
                              f"for {self.run_id}: {e}", exc_info=True)
                raise
            self.delivered += len(batch)
            for item in batch:
                if item.callback:
                    item.callback(item.record)
        finally:
            self.is_flushing = False

    def close(self) -> None:
        self.flush()
        self._close()

    def _write_batch(self, batch: List[QueuedRecord]) -> None:
        """Deliver a batch - to be implemented by subclass"""
        raise NotImplementedError("Subclass must implement _write_batch")

    def _close(self) -> None:
        pass


class MemoryDiagnosticsQueue(DiagnosticsQueue):
    """Keeps delivered records in memory"""

    def __init__(self, run_id: str = "run", flush_every: int = 32):
        super().__init__(run_id, flush_every)
        self.records: List[DiagnosticsRecord] = []

    def _write_batch(self, batch: List[QueuedRecord]) -> None:
        self.records.extend(item.record for item in batch)


class CsvDiagnosticsQueue(DiagnosticsQueue):
    """Streams records to the diagnostics CSV"""

    def __init__(self, path: Path, run_id: str = "run", flush_every: int = 32):
        super().__init__(run_id, flush_every)
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = self.path.open("w", encoding="utf-8", newline="")
        self._handle.write(",".join(DiagnosticsRecord.columns()) + "\n")

    def _write_batch(self, batch: List[QueuedRecord]) -> None:
        for item in batch:
            self._handle.write(format_row(item.record.as_row()) + "\n")
        self._handle.flush()

    def _close(self) -> None:
        if not self._handle.closed:
            self._handle.close()
            logging.info(f"Diagnostics for {self.run_id} written to {self.path} "
                         f"({self.delivered} records)")
