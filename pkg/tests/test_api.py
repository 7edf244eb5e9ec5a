import pytest
from fastapi.testclient import TestClient

import json

import config
import main
from app.api import routes
from app.models.schemas import RunSettings

QUICK_STAGES = [
    {"noise_range": {"max_translation": t, "max_rotation": r}, "ransac": {"iterations": 100, "early_exit": True}}
    for t, r in ((2.0, 10.0), (0.2, 0.5), (0.05, 0.1))
]
QUICK_RUN = {"stages": QUICK_STAGES, "synthetic_points": 2000}


@pytest.fixture
def client(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "SETTINGS_FILE_PATH", tmp_path / "user_settings.json")
    monkeypatch.setattr(routes.manager.data_manager, "base_dir", tmp_path / "Data_log")
    monkeypatch.setattr(routes.data_loader, "base_dir", tmp_path / "Data_log")
    monkeypatch.setattr(routes.manager, "settings", routes.manager.settings)
    with TestClient(main.app) as c:
        yield c
    routes.manager.wait(timeout=60)


def test_localize(client):
    resp = client.post("/localize", json={"run": QUICK_RUN, "seed": 3})
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "success"
    records = body["data"]["records"]
    assert [r["stage"] for r in records] == [0, 1, 2]
    assert records[-1]["E_t"] < 1e-3
    assert body["data"]["initial_log_error"] > body["data"]["final_log_error"]


def test_localize_with_missing_map(client, tmp_path):
    run = {**QUICK_RUN, "map_path": str(tmp_path / "nope.bin"),
           "intrinsics_path": str(tmp_path / "K.json"), "trajectory_path": str(tmp_path / "poses.txt")}
    resp = client.post("/localize", json={"run": run})
    assert resp.status_code == 400


def test_localize_rejects_bad_stage_order(client):
    run = {"stages": list(reversed(QUICK_STAGES))}
    assert client.post("/localize", json={"run": run}).status_code == 422


def test_settings_round_trip(client, tmp_path):
    settings = client.get("/settings").json()
    assert settings["ransac_iterations"] >= 1

    settings["ransac_iterations"] = 321
    settings["occlusion_enabled"] = True
    assert client.post("/settings", json=settings).json()["status"] == "success"
    assert client.get("/settings").json()["ransac_iterations"] == 321
    assert (tmp_path / "user_settings.json").exists()

    run = routes.manager.default_run_config()
    assert all(s.ransac.iterations == 321 for s in run.stages)
    assert run.projection.occlusion is not None


def test_settings_validation(client, tmp_path):
    assert client.post("/settings", json={"min_inliers": 2}).status_code == 422
    assert client.post("/settings", json={"occlusion_enabled": True, "occlusion_kernel": 4}).status_code == 422
    assert not (tmp_path / "user_settings.json").exists()
    assert "voxel_size" not in client.get("/settings").json()


def test_even_kernel_on_disk_falls_back_to_defaults(client, tmp_path):
    (tmp_path / "user_settings.json").write_text(json.dumps({"occlusion_enabled": True, "occlusion_kernel": 4}))
    settings = routes.manager._load_initial_settings()
    assert settings.occlusion_kernel == config.OCCLUSION_KERNEL
    assert settings.occlusion_enabled is False


def test_unusable_settings_are_reported_not_raised(client, monkeypatch):
    broken = RunSettings.model_construct(**{**config.DEFAULT_RUN_SETTINGS,
                                            "occlusion_enabled": True, "occlusion_kernel": 4})
    monkeypatch.setattr(routes.manager, "settings", broken)
    assert client.post("/localize", json={}).status_code == 422
    resp = client.post("/benchmark/start", json={})
    assert resp.status_code == 400
    assert "Invalid settings" in resp.json()["detail"]


def test_benchmark_lifecycle(client):
    resp = client.post("/benchmark/start", json={"run": {**QUICK_RUN, "seeds": [0, 1]}})
    assert resp.status_code == 200
    run_id = resp.json()["data"]["run_id"]
    routes.manager.wait(timeout=120)

    status = client.get("/benchmark/status").json()
    assert status["message"] == "FINISHED"
    assert status["data"]["completed"] == 2
    assert status["data"]["summary"]["seeds"] == 2

    tree = client.get("/archive/tree").json()
    year = next(iter(tree))
    month = next(iter(tree[year]))
    day = next(iter(tree[year][month]))
    assert run_id in tree[year][month][day]

    report = client.get(f"/archive/report/{year}/{month}/{day}/{run_id}").json()
    assert len(report["data"]["records"]) == 6
    assert report["data"]["summary"]["seeds"] == 2
    assert report["data"]["config"]["seeds"] == [0, 1]


def test_stop_without_run(client):
    assert client.post("/benchmark/stop").json()["status"] == "warning"


def test_missing_report(client):
    assert client.get("/archive/report/1999/01/01/run00_19990101").status_code == 404


def test_websocket_sends_status_on_connect(client):
    with client.websocket_connect("/ws") as ws:
        message = ws.receive_json()
    assert message["type"] == "status"
    assert message["data"]["is_running"] is False
