import logging

from fastapi import APIRouter, HTTPException
from pydantic import ValidationError

from app.core.benchmark_manager import BenchmarkManager
from app.core.data_loader import DataLoader
from app.core.errors import GeometryError, UserInputError
from app.core.pipeline import load_scene, localize_seed
from app.models.schemas import ApiResponse, BenchmarkRequest, LocalizeRequest, RunSettings

logger = logging.getLogger(__name__)

router = APIRouter()
manager = BenchmarkManager()
data_loader = DataLoader()


# --- 1. Single localization ---
@router.post("/localize", response_model=ApiResponse)
def localize(request: LocalizeRequest):
    try:
        run = request.run or manager.default_run_config()
    except ValidationError as e:
        raise HTTPException(422, f"Invalid settings: {e}")
    try:
        scene = load_scene(run)
        records, (eta, err) = localize_seed(scene, run, request.seed)
    except UserInputError as e:
        raise HTTPException(400, str(e))
    except GeometryError as e:
        raise HTTPException(422, str(e))
    return ApiResponse(status="success", message=f"{len(records)} stages",
                       data={"records": [r.to_dict() for r in records],
                             "initial_log_error": eta, "final_log_error": err})


# --- 2. Benchmark control ---
@router.post("/benchmark/start", response_model=ApiResponse)
def start_benchmark(request: BenchmarkRequest):
    result = manager.start_benchmark(request.run)
    if result["status"] == "error":
        raise HTTPException(400, result["message"])
    return ApiResponse(status=result["status"], message=result["message"],
                       data={"run_id": manager.status.run_id})


@router.post("/benchmark/stop", response_model=ApiResponse)
def stop_benchmark():
    result = manager.stop_benchmark()
    return ApiResponse(status=result["status"], message=result["message"])


@router.get("/benchmark/status", response_model=ApiResponse)
def get_status():
    s = manager.status
    return ApiResponse(status="success", message=s.message, data=manager.get_status())


# --- 3. Settings ---
@router.get("/settings", response_model=RunSettings)
def get_settings():
    return manager.get_settings()


@router.post("/settings", response_model=ApiResponse)
def update_settings(settings: RunSettings):
    manager.update_settings(settings.model_dump())
    return ApiResponse(status="success", message="Updated")


# --- 4. Archive ---
@router.get("/archive/tree")
def get_archive_tree():
    return data_loader.get_archive_tree()


@router.get("/archive/report/{year}/{month}/{day}/{run_id}", response_model=ApiResponse)
def get_report(year: str, month: str, day: str, run_id: str):
    try:
        data = data_loader.load_run(year, month, day, run_id)
    except UserInputError as e:
        raise HTTPException(404, str(e))
    return ApiResponse(status="success", message=run_id, data=data)
