import json
import logging
import queue
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

import config
from app.core.data_manager import DataManager
from app.core.pipeline import load_scene, localize_seed, summarize_records
from app.core.structures import BenchmarkRecord, BenchmarkStatus, Scene
from app.models.schemas import OcclusionConfig, ProjectionConfig, RunConfig, RunSettings

logger = logging.getLogger(__name__)

SeedResult = Tuple[int, List[BenchmarkRecord], Tuple[float, float]]


def iter_seeds(scene: Scene, run: RunConfig,
               stop: Callable[[], bool] = lambda: False) -> Iterator[SeedResult]:
    """Localizes every seed of `run`; results come back in seed order even with a worker pool."""
    if run.workers <= 1:
        for seed in run.seeds:
            if stop():
                return
            records, log_err = localize_seed(scene, run, seed)
            yield seed, records, log_err
        return

    with ThreadPoolExecutor(max_workers=run.workers) as pool:
        futures = [pool.submit(localize_seed, scene, run, seed) for seed in run.seeds]
        for seed, fut in zip(run.seeds, futures):
            if stop():
                for f in futures:
                    f.cancel()
                return
            records, log_err = fut.result()
            yield seed, records, log_err


def run_benchmark(run: RunConfig, scene: Optional[Scene] = None
                  ) -> Tuple[List[BenchmarkRecord], Dict[str, Any]]:
    """Synchronous seed sweep: all records plus the summary record."""
    scene = scene or load_scene(run)
    records: List[BenchmarkRecord] = []
    log_errors = []
    for seed, seed_records, log_err in iter_seeds(scene, run):
        records.extend(seed_records)
        log_errors.append(log_err)
        logger.debug(f"[Benchmark] seed {seed}: final E_t {seed_records[-1].E_t:.4g} m")
    return records, summarize_records(records, log_errors)


class BenchmarkManager:
    """Runs seed sweeps in the background: a producer thread localizes, a consumer thread reports."""
    _instance = None

    def __new__(cls, *args, **kwargs):
        if not cls._instance:
            cls._instance = super(BenchmarkManager, cls).__new__(cls)
        return cls._instance

    def __init__(self):
        if hasattr(self, "initialized"):
            return
        self.initialized = True

        self.data_manager = DataManager()
        self.settings = self._load_initial_settings()
        self.status = BenchmarkStatus()
        self.stop_flag = False

        self.result_queue: "queue.Queue[Optional[SeedResult]]" = queue.Queue()
        self.producer_thread: Optional[threading.Thread] = None
        self.consumer_thread: Optional[threading.Thread] = None
        self.on_record: Optional[Callable[[Dict[str, Any]], None]] = None

    # --- Settings ---
    def _load_initial_settings(self) -> RunSettings:
        base = dict(config.DEFAULT_RUN_SETTINGS)
        settings_path = Path(config.SETTINGS_FILE_PATH)
        if settings_path.exists():
            try:
                with open(settings_path, "r") as f:
                    saved = json.load(f)
                base.update({k: v for k, v in saved.items() if k in base})
                logger.info(f"[Settings] Loaded user settings from {settings_path}")
            except (OSError, json.JSONDecodeError) as e:
                logger.warning(f"[Settings] Failed to load user settings: {e}")
        try:
            return RunSettings(**base)
        except ValueError as e:
            logger.warning(f"[Settings] Saved settings rejected ({e}), using defaults")
            return RunSettings(**config.DEFAULT_RUN_SETTINGS)

    def _save_settings_to_disk(self):
        try:
            with open(config.SETTINGS_FILE_PATH, "w") as f:
                f.write(self.settings.model_dump_json(indent=4))
            logger.info(f"[Settings] Saved to {config.SETTINGS_FILE_PATH}")
        except OSError as e:
            logger.warning(f"[Settings] Save failed: {e}")

    def get_settings(self) -> Dict[str, Any]:
        return self.settings.model_dump()

    def update_settings(self, new_settings: Dict[str, Any]):
        self.settings = RunSettings(**{**self.get_settings(), **new_settings})
        self._save_settings_to_disk()
        logger.info(f"[Settings] Updated: {self.get_settings()}")

    def default_run_config(self) -> RunConfig:
        """A RunConfig whose projection and RANSAC defaults come from the persisted settings."""
        s = self.settings
        occlusion = None
        if s.occlusion_enabled:
            occlusion = OcclusionConfig(kernel_size=s.occlusion_kernel, threshold=s.occlusion_threshold,
                                        direction=s.occlusion_direction)
        run = RunConfig(projection=ProjectionConfig(max_depth=s.max_depth, occlusion=occlusion), workers=s.workers)
        stages = [st.model_copy(update={"ransac": st.ransac.model_copy(update={
            "iterations": s.ransac_iterations,
            "reproj_threshold": s.reproj_threshold,
            "min_inliers": s.min_inliers,
        })}) for st in run.stages]
        return run.model_copy(update={"stages": stages})

    # --- Sweep control ---
    def start_benchmark(self, run: Optional[RunConfig] = None) -> Dict[str, str]:
        if self.status.is_running:
            return {"status": "error", "message": "Benchmark already running"}
        try:
            run = run or self.default_run_config()
        except ValueError as e:
            logger.warning(f"[Benchmark] Saved settings do not form a run: {e}")
            return {"status": "error", "message": f"Invalid settings: {e}"}
        try:
            scene = load_scene(run)
        except Exception as e:
            return {"status": "error", "message": f"Scene loading failed: {e}"}

        self.stop_flag = False
        try:
            self.data_manager.init_run(run.model_dump(mode="json"))
        except OSError as e:
            return {"status": "error", "message": f"Data Init Failed: {e}"}
        self.status = BenchmarkStatus(is_running=True, total=len(run.seeds),
                                      run_id=self.data_manager.current_run_id_str, message="Starting...")

        with self.result_queue.mutex:
            self.result_queue.queue.clear()

        self.consumer_thread = threading.Thread(target=self._consumer_loop, daemon=True)
        self.consumer_thread.start()
        self.producer_thread = threading.Thread(target=self._producer_loop, args=(scene, run), daemon=True)
        self.producer_thread.start()
        return {"status": "success", "message": f"Benchmark started ({len(run.seeds)} seeds)"}

    def stop_benchmark(self) -> Dict[str, str]:
        if self.status.is_running:
            self.stop_flag = True
            self.status.message = "Stopping..."
            return {"status": "success", "message": "Stop signal sent"}
        return {"status": "warning", "message": "No benchmark running"}

    def get_status(self) -> Dict[str, Any]:
        return asdict(self.status)

    def wait(self, timeout: Optional[float] = None):
        for t in (self.producer_thread, self.consumer_thread):
            if t is not None:
                t.join(timeout)

    def _producer_loop(self, scene: Scene, run: RunConfig):
        try:
            for seed, records, log_err in iter_seeds(scene, run, stop=lambda: self.stop_flag):
                self.status.current_seed = seed
                self.result_queue.put((seed, records, log_err))
        except Exception as e:
            logger.exception(f"[Manager] Sweep aborted: {e}")
            self.status.errors.append(str(e))
        finally:
            self.result_queue.put(None)

    def _consumer_loop(self):
        all_records: List[BenchmarkRecord] = []
        log_errors = []
        while True:
            item = self.result_queue.get()
            if item is None:
                break
            seed, records, log_err = item
            for r in records:
                self.data_manager.save_record(r)
                if self.on_record:
                    self.on_record(r.to_dict())
            all_records.extend(records)
            log_errors.append(log_err)
            self.status.completed += 1
            self.status.message = f"Seed {seed} done ({self.status.completed}/{self.status.total})"

        summary = summarize_records(all_records, log_errors) if all_records else None
        self.data_manager.close_run(summary)
        self.status.summary = summary
        self.status.is_running = False
        self.status.message = "STOPPED" if self.stop_flag else "FINISHED"
        logger.info(f"[Manager] Benchmark {self.status.message.lower()}: {self.status.completed} seeds")
