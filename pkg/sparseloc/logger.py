"""
sparseloc Run Logger

Records the execution trace of a pipeline run, including:
- run configuration and seeds
- per-window detector / refiner / tracker summaries
- stage failures and trial boundaries
"""

import json
import uuid
from datetime import datetime
from pathlib import Path
from typing import Any, Optional

import numpy as np


class RunLogger:
    """
    Append-only JSONL trace of one pipeline run.

    Each run gets its own file so traces from parallel trials never
    interleave.
    """

    def __init__(
        self,
        run_name: str = "sparseloc",
        log_dir: Optional[Path] = None,
    ):
        self.run_name = run_name
        self.run_id = uuid.uuid4().hex[:8]

        self.log_dir = (
            Path(log_dir)
            if log_dir
            else Path.home() / ".sparseloc" / "logs"
        )
        self.log_dir.mkdir(parents=True, exist_ok=True)

        self.log_file: Optional[Path] = None
        self.log_index: int = 0
        self.start_time: Optional[datetime] = None

    # ==========================================================
    # Run lifecycle
    # ==========================================================

    def start_run(self, command: str, seed: int, config: dict[str, Any]):
        """Start a new run and write its header."""
        self.start_time = datetime.now()

        timestamp = self.start_time.strftime("%Y%m%d_%H%M%S")
        filename = f"{self.run_name}_{self.run_id}_{timestamp}.log"
        self.log_file = self.log_dir / filename
        self.log_index = 0

        header = {
            "run_id": self.run_id,
            "command": command,
            "seed": seed,
            "config": config,
            "start_time": self.start_time.isoformat(),
        }

        self._write_entry("RUN_START", header)

    def end_run(self, status: str = "completed", error: str | None = None):
        payload = {
            "status": status,
            "end_time": datetime.now().isoformat(),
        }
        if error:
            payload["error"] = error

        self._write_entry("RUN_END", payload)

    # ==========================================================
    # Window / trial events
    # ==========================================================

    def log_window(self, trial: int, window: int, summary: dict[str, Any]):
        self._write_entry("WINDOW", {"trial": trial, "window": window, **summary})

    def log_window_error(self, trial: int, window: int, stage: str, error: str):
        self._write_entry(
            "WINDOW_ERROR",
            {"trial": trial, "window": window, "stage": stage, "error": error},
        )

    def log_trial_end(self, trial: int, payload: dict[str, Any]):
        self._write_entry("TRIAL_END", {"trial": trial, **payload})

    def log_event(self, event_type: str, payload: dict[str, Any]):
        self._write_entry(event_type.upper(), payload)

    # ==========================================================
    # Internal
    # ==========================================================

    def _write_entry(self, entry_type: str, payload: dict[str, Any]):
        if not self.log_file:
            return

        self.log_index += 1

        entry = {
            "index": self.log_index,
            "type": entry_type,
            "timestamp": datetime.now().isoformat(),
            "payload": payload,
        }

        with open(self.log_file, "a", encoding="utf-8") as f:
            f.write(json.dumps(entry, ensure_ascii=False, default=_json_default) + "\n")

    def get_log_file_path(self) -> Optional[Path]:
        return self.log_file


def _json_default(value: Any):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
