import json
import logging
import os
from datetime import datetime
from typing import Optional

from nested_transport.constants import default_log_file

logger = logging.getLogger(__name__)

_UNSET = object()


class SolverMonitor:
    """Appends one JSON line per solver run or error to a run log.

    ``log_file=None`` turns the monitor into a no-op.
    """

    def __init__(self, log_file=_UNSET):
        self.log_file = default_log_file() if log_file is _UNSET else log_file
        if self.log_file:
            os.makedirs(os.path.dirname(os.path.abspath(self.log_file)), exist_ok=True)

    def _append(self, entry: dict):
        if not self.log_file:
            return
        try:
            with open(self.log_file, "a") as f:
                f.write(json.dumps(entry, default=str) + "\n")
        except Exception as e:
            logger.warning(f"[SolverMonitor] Failed to log: {e}")

    def log_run(self, solver: str, status: str, details: Optional[dict] = None):
        """Logs a finished solve with timestamp and outcome."""
        self._append({
            "timestamp": datetime.now().isoformat(),
            "solver": solver,
            "status": status,
            "details": details or {},
        })

    def log_error(self, solver: str, error: str, context: Optional[dict] = None):
        """Log solver errors."""
        self._append({
            "timestamp": datetime.now().isoformat(),
            "solver": solver,
            "error": error,
            "context": context or {},
        })
