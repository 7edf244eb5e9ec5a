import json
import logging
import os
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, TextIO

import config
from app.core.structures import BenchmarkRecord

logger = logging.getLogger(__name__)

REPORT_FILE = "report.jsonl"


def format_record(record: Dict[str, Any]) -> str:
    """One report line. Key order is fixed so identical runs give identical bytes."""
    return json.dumps(record, allow_nan=False)


def write_report(path, records: Iterable[BenchmarkRecord], summary: Dict[str, Any]):
    """Newline-delimited JSON: one record per seed and stage, then the summary record."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        for r in records:
            f.write(format_record(r.to_dict()) + "\n")
        f.write(format_record(summary) + "\n")


class DataManager:
    """Run directories Data_log/YYYY/MM/DD/runXX_YYYYMMDD with config.json and report.jsonl."""

    def __init__(self, base_dir: Optional[Path] = None):
        self.base_dir = Path(base_dir or config.DATA_BASE_DIR)
        self.current_run_dir: Optional[Path] = None
        self.current_run_id_str = "run00"
        self._report: Optional[TextIO] = None

    def _get_next_id(self, day_dir: Path) -> int:
        if not day_dir.exists():
            return 0
        max_id = -1
        for item in day_dir.iterdir():
            if item.is_dir() and item.name.startswith("run"):
                digits = ""
                for char in item.name[3:]:
                    if not char.isdigit():
                        break
                    digits += char
                if digits:
                    max_id = max(max_id, int(digits))
        return max_id + 1

    def init_run(self, run_config: Dict[str, Any]) -> Path:
        now = datetime.now()
        year, month, day = now.strftime("%Y"), now.strftime("%m"), now.strftime("%d")
        day_dir = self.base_dir / year / month / day
        os.makedirs(day_dir, exist_ok=True)

        run_name = f"run{self._get_next_id(day_dir):02d}_{year}{month}{day}"
        self.current_run_dir = day_dir / run_name
        self.current_run_id_str = run_name
        os.makedirs(self.current_run_dir, exist_ok=True)

        with open(self.current_run_dir / "config.json", "w") as f:
            json.dump(run_config, f, indent=4)
        self._report = open(self.current_run_dir / REPORT_FILE, "w")
        logger.info(f"[DataManager] Run initialized at: {self.current_run_dir}")
        return self.current_run_dir

    def save_record(self, record: BenchmarkRecord):
        if self._report is None:
            return
        self._report.write(format_record(record.to_dict()) + "\n")
        self._report.flush()

    def close_run(self, summary: Optional[Dict[str, Any]] = None):
        if self._report is None:
            return
        if summary is not None:
            self._report.write(format_record(summary) + "\n")
        self._report.close()
        self._report = None
        logger.info(f"[DataManager] Run closed: {self.current_run_dir}")
