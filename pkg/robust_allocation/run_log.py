"""
Run Log Module
Appends CLI run events to a local JSON-lines file in the output directory
"""

import json
import os
import time
from datetime import datetime

from absl import logging

from robust_allocation.config import RUN_LOG_FILE


class RunLog:
    """Local event log for one output directory (offline, append-only)."""

    def __init__(self, out_dir):
        """
        Initialize the run log.

        Args:
            out_dir: Output directory; created when missing
        """
        self.out_dir = out_dir
        if not os.path.exists(out_dir):
            os.makedirs(out_dir)
            logging.info("Created output directory: %s", out_dir)
        self.path = os.path.join(out_dir, RUN_LOG_FILE)

    def log_event(self, kind, **fields):
        """
        Append one event.

        Args:
            kind: Event name, e.g. run_started, run_completed, divergence, oracle_failed
            **fields: JSON-serializable payload
        """
        event = {
            "event": kind,
            "timestamp": int(time.time() * 1000),
            "datetime": datetime.now().isoformat(),
            **fields,
        }
        try:
            with open(self.path, "a") as f:
                f.write(json.dumps(event) + "\n")
        except OSError as e:
            logging.warning("Error writing run log %s: %s", self.path, e)
