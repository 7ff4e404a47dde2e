"""
Run event log for wlft.

Records the significant steps of every command for reproducibility and post-hoc
inspection:
- Run lifecycle (start, complete, failure)
- Training progress (epochs, checkpoints, best model, resume)
- Evaluation, gradient checks, dataset synthesis and sweep cells

Writes append-only JSON lines to events.jsonl in the run's output directory,
falls back to in-memory storage when no output directory is configured.
"""

import json
import os
import uuid
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class EventAction(str, Enum):
    """Categorized event types."""
    # Run lifecycle
    RUN_START = "run.start"
    RUN_COMPLETE = "run.complete"
    RUN_FAILED = "run.failed"

    # Training
    TRAIN_EPOCH_COMPLETE = "train.epoch.complete"
    TRAIN_CHECKPOINT = "train.checkpoint"
    TRAIN_BEST_CHECKPOINT = "train.checkpoint.best"
    TRAIN_RESUME = "train.resume"
    TRAIN_NUMERICAL_ABORT = "train.numerical_abort"

    # Other commands
    EVAL_COMPLETE = "eval.complete"
    GRADCHECK_RESULT = "gradcheck.result"
    SYNTH_COMPLETE = "synth.complete"
    SWEEP_CELL_COMPLETE = "sweep.cell.complete"
    DECOMPOSE_COMPLETE = "decompose.complete"


class EventSeverity(str, Enum):
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"


class EventRecord(BaseModel):
    """Immutable run event."""
    event_id: str = Field(default_factory=lambda: str(uuid.uuid4()))
    timestamp: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    action: EventAction = Field(description="Categorized event type")
    severity: EventSeverity = Field(default=EventSeverity.INFO)
    run_dir: Optional[str] = Field(default=None, description="Output directory of the run")
    metadata: Dict[str, Any] = Field(default_factory=dict)
    error_message: Optional[str] = Field(default=None)
    error_type: Optional[str] = Field(default=None)


class EventQueryParams(BaseModel):
    """Filters for querying events."""
    action: Optional[EventAction] = None
    action_prefix: Optional[str] = None
    severity: Optional[EventSeverity] = None
    start_date: Optional[datetime] = None
    limit: int = Field(default=100, le=10000)
    offset: int = Field(default=0, ge=0)


def _filter(records: List[EventRecord], params: EventQueryParams) -> List[EventRecord]:
    results = list(records)
    if params.action:
        results = [r for r in results if r.action == params.action]
    if params.action_prefix:
        results = [r for r in results if r.action.value.startswith(params.action_prefix)]
    if params.severity:
        results = [r for r in results if r.severity == params.severity]
    if params.start_date:
        results = [r for r in results if r.timestamp >= params.start_date]
    results.sort(key=lambda r: r.timestamp, reverse=True)
    return results[params.offset:params.offset + params.limit]


def _stats(records: List[EventRecord], storage: str) -> dict:
    action_counts: Dict[str, int] = {}
    severity_counts: Dict[str, int] = {}
    for r in records:
        action_counts[r.action.value] = action_counts.get(r.action.value, 0) + 1
        severity_counts[r.severity.value] = severity_counts.get(r.severity.value, 0) + 1
    return {
        "total_events": len(records),
        "error_count": severity_counts.get("error", 0),
        "events_by_action": action_counts,
        "events_by_severity": severity_counts,
        "storage": storage,
    }


class JsonlEventStore:
    """Append-only JSON-lines event file."""

    def __init__(self, path: Path):
        self.path = Path(path)

    def connect(self) -> bool:
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch(exist_ok=True)
        except OSError as e:
            print(f"⚠️  Cannot open event log {self.path}: {e}")
            return False
        return True

    def close(self):
        pass

    def log(self, record: EventRecord) -> str:
        with self.path.open("a", encoding="utf-8") as f:
            f.write(record.model_dump_json() + "\n")
        return record.event_id

    def read_all(self) -> List[EventRecord]:
        """Every event in the file, including ones written by earlier runs."""
        records = []
        with self.path.open("r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    records.append(EventRecord.model_validate(json.loads(line)))
        return records

    def query(self, params: EventQueryParams) -> List[EventRecord]:
        return _filter(self.read_all(), params)

    def get_stats(self, days: int = 30) -> dict:
        since = datetime.now(timezone.utc) - timedelta(days=days)
        return _stats([r for r in self.read_all() if r.timestamp >= since], "jsonl")


class InMemoryEventStore:
    """Fallback in-memory event storage."""

    def __init__(self, max_records: int = 10000):
        self._records: List[EventRecord] = []
        self._max_records = max_records

    def connect(self) -> bool:
        return True

    def close(self):
        pass

    def log(self, record: EventRecord) -> str:
        self._records.append(record)
        # Trim if over limit (FIFO)
        if len(self._records) > self._max_records:
            self._records = self._records[-self._max_records:]
        return record.event_id

    def query(self, params: EventQueryParams) -> List[EventRecord]:
        return _filter(self._records, params)

    def get_stats(self, days: int = 30) -> dict:
        since = datetime.now(timezone.utc) - timedelta(days=days)
        return _stats([r for r in self._records if r.timestamp >= since], "in-memory")


# Global event store instance
_event_store = None


def initialize_event_store(run_dir: Optional[Path] = None):
    """Use events.jsonl under run_dir (or WLFT_EVENT_LOG); fall back to in-memory."""
    global _event_store

    target = os.getenv("WLFT_EVENT_LOG") or (str(Path(run_dir) / "events.jsonl") if run_dir else None)
    if target:
        store = JsonlEventStore(Path(target))
        if store.connect():
            _event_store = store
            return _event_store

    _event_store = InMemoryEventStore()
    _event_store.connect()
    return _event_store


def close_event_store():
    global _event_store
    if _event_store:
        _event_store.close()
    _event_store = None


def get_event_store():
    """Get the global event store; an in-memory store is created on first use."""
    global _event_store
    if _event_store is None:
        _event_store = InMemoryEventStore()
    return _event_store


def log_event(
    action: EventAction,
    run_dir: Optional[Path] = None,
    severity: EventSeverity = EventSeverity.INFO,
    error: Optional[BaseException] = None,
    **metadata,
) -> str:
    """Record one event in the global store."""
    record = EventRecord(
        action=action,
        severity=severity,
        run_dir=str(run_dir) if run_dir is not None else None,
        metadata=metadata,
        error_message=str(error) if error is not None else None,
        error_type=type(error).__name__ if error is not None else None,
    )
    return get_event_store().log(record)
