# run_logger.py - run-directory artifact writer (result JSON, CSV exports, progress log)
import json
import logging
import os
import time
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional

import psutil

from config import PERFORMANCE_CONFIG
from fields import (
    EmsLayout,
    write_gamma_map_csv,
    write_layout_json,
    write_patches_csv,
    write_pattern_csv,
)
from pso import ProgressSink, csv_progress_sink

logger = logging.getLogger(__name__)

RUN_LOG_HEADER = "iteration,best_cost,elapsed_s\n"


def resource_stats() -> Dict:
    """Process memory and CPU usage at call time"""
    process = psutil.Process(os.getpid())
    cpu = process.cpu_times()
    return {
        "rss_mb": process.memory_info().rss / 2**20,
        "cpu_user_s": cpu.user,
        "cpu_system_s": cpu.system,
        "num_threads": process.num_threads(),
    }


class RunLogger:
    """Owns one output directory; nothing is written outside it"""

    def __init__(self, out_dir, command: str = "synthesize"):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.command = command

        self.run_log_file = self.out_dir / "run_log.csv"
        self.summary_file = self.out_dir / "run_summary.json"
        self._run_log = None

        self._initialize_files()
        logger.info(f"RunLogger initialized in {self.out_dir}")

    def _initialize_files(self):
        if not self.summary_file.exists():
            self._write_json(
                self.summary_file,
                {
                    "command": self.command,
                    "start_time": datetime.now().isoformat(),
                    "artifacts": [],
                },
            )

    def _write_json(self, path: Path, data: Dict) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, ensure_ascii=False)

    def artifact_path(self, name: str) -> Path:
        path = self.out_dir / name
        self._update_summary("artifacts", name)
        return path

    def _update_summary(self, field: str, value) -> None:
        try:
            with open(self.summary_file, "r", encoding="utf-8") as f:
                summary = json.load(f)

            if isinstance(summary.get(field), list):
                if value not in summary[field]:
                    summary[field].append(value)
            else:
                summary[field] = value
            summary["last_update"] = datetime.now().isoformat()

            self._write_json(self.summary_file, summary)
        except Exception as e:
            logger.error(f"Error updating run summary: {e}")

    def progress_sink(self) -> ProgressSink:
        """Streams `iteration,best_cost,elapsed_s` lines into run_log.csv"""
        self._run_log = open(self.run_log_file, "w", encoding="utf-8", newline="")
        self._run_log.write(RUN_LOG_HEADER)
        self._update_summary("artifacts", self.run_log_file.name)
        return csv_progress_sink(self._run_log)

    def write_json(self, name: str, data: Dict) -> Path:
        path = self.artifact_path(name)
        self._write_json(path, data)
        logger.info(f"Wrote {path}")
        return path

    def write_layout(self, layout: EmsLayout, stem: str = "layout") -> None:
        write_layout_json(layout, self.artifact_path(f"{stem}.json"))
        write_patches_csv(layout, self.artifact_path(f"{stem}_patches.csv"))

    def write_layout_report(self, report, prefix: str = "") -> None:
        """Pattern cuts, visible-range grids and aperture Gamma maps per polarization"""
        for pol, rep in report.polarizations.items():
            write_pattern_csv(rep.cut, self.artifact_path(f"{prefix}pattern_cut_{pol.value}.csv"))
            write_pattern_csv(rep.grid, self.artifact_path(f"{prefix}pattern_grid_{pol.value}.csv"))
            write_gamma_map_csv(rep.gamma_map, self.artifact_path(f"{prefix}gamma_{pol.value}.csv"))
        self.write_json(f"{prefix}report.json", report.to_dict())

    def write_result(self, result) -> Path:
        data = result.to_dict()
        if PERFORMANCE_CONFIG["enable_resource_monitoring"]:
            data["resources"] = resource_stats()
        self.write_layout(result.layout)
        self.write_layout_report(result.report)
        result.twin.save(self.artifact_path("twin.json"))
        return self.write_json("synthesis_result.json", data)

    def close(self, status: str = "ok", error: Optional[str] = None) -> None:
        if self._run_log is not None:
            self._run_log.close()
            self._run_log = None
        self._update_summary("end_time", datetime.now().isoformat())
        self._update_summary("status", status)
        if error:
            self._update_summary("error", error)
        logger.info(f"RunLogger closed ({status}) for {self.out_dir}")

    def __enter__(self) -> "RunLogger":
        self._started = time.time()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self._update_summary("elapsed_s", time.time() - self._started)
        self.close("error" if exc_type else "ok", str(exc) if exc else None)
