import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional

import config
from app.core.data_manager import REPORT_FILE
from app.core.errors import IoFailure, MalformedFile


class DataLoader:
    def __init__(self, base_dir: Optional[Path] = None):
        self.base_dir = Path(base_dir or config.DATA_BASE_DIR)

    def get_archive_tree(self) -> Dict[str, Any]:
        tree = {}
        if not self.base_dir.exists():
            return tree
        for year_dir in sorted(p for p in self.base_dir.iterdir() if p.is_dir()):
            tree[year_dir.name] = {}
            for month_dir in sorted(p for p in year_dir.iterdir() if p.is_dir()):
                tree[year_dir.name][month_dir.name] = {}
                for day_dir in sorted(p for p in month_dir.iterdir() if p.is_dir()):
                    runs = [r.name for r in sorted(day_dir.iterdir()) if r.is_dir() and r.name.startswith("run")]
                    tree[year_dir.name][month_dir.name][day_dir.name] = runs
        return tree

    def _sanitize(self, data):
        """NaN / Infinity -> None so the payload stays valid JSON."""
        if isinstance(data, dict):
            return {k: self._sanitize(v) for k, v in data.items()}
        if isinstance(data, list):
            return [self._sanitize(v) for v in data]
        if isinstance(data, float) and (math.isnan(data) or math.isinf(data)):
            return None
        return data

    def load_report(self, path) -> Dict[str, Any]:
        """Splits a report file into its records and the trailing summary."""
        path = Path(path)
        if not path.exists():
            raise IoFailure(f"Report not found: {path}")
        records: List[Dict[str, Any]] = []
        summary = None
        with open(path, "r") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as e:
                    raise MalformedFile(f"{path}:{lineno}: {e}") from e
                if row.get("summary"):
                    summary = row
                else:
                    records.append(row)
        return {"records": records, "summary": summary}

    def load_run(self, year: str, month: str, day: str, run_id: str) -> Dict[str, Any]:
        run_dir = self.base_dir / year / month / day / run_id
        if not run_dir.exists():
            raise IoFailure(f"Run not found: {run_dir}")
        config_data = {}
        config_path = run_dir / "config.json"
        if config_path.exists():
            with open(config_path, "r") as f:
                config_data = json.load(f)
        report = {"records": [], "summary": None}
        if (run_dir / REPORT_FILE).exists():
            report = self.load_report(run_dir / REPORT_FILE)
        return self._sanitize({"config": config_data, **report})
