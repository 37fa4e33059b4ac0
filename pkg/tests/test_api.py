import uuid

import pytest
from fastapi.testclient import TestClient

from app.main import app

SMALL_SCENE = {"preset": "wall", "rig": {"width": 32, "height": 16}}


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"


def test_malformed_task_id(client):
    assert client.get("/api/depth/task/not-a-task").status_code == 400


def test_unknown_task(client):
    assert client.get(f"/api/depth/task/{uuid.uuid4()}").status_code == 404


def test_invalid_pipeline_config(client):
    response = client.post("/api/depth/estimate", json={"config": {"stf": {"groups": 3}}})
    assert response.status_code == 400
    assert "groups" in response.json()["detail"]


def test_synth_then_eval(client, tmp_path):
    response = client.post(
        "/api/depth/synth", params={"wait": True}, json={"scene": SMALL_SCENE, "out": str(tmp_path / "data")}
    )
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "completed", body
    data_dir = body["result"]["data_dir"]

    response = client.post(
        "/api/depth/eval", params={"wait": True}, json={"pred_dir": data_dir, "gt_dir": data_dir}
    )
    body = response.json()
    assert body["status"] == "completed", body
    assert body["result"]["report"]["mean"]["Abs.Rel"] == 0.0

    polled = client.get(f"/api/depth/task/{body['id']}").json()
    assert polled["kind"] == "eval"


def test_failed_job_reports_error(client, tmp_path):
    response = client.post(
        "/api/depth/eval", params={"wait": True}, json={"pred_dir": str(tmp_path), "gt_dir": str(tmp_path)}
    )
    body = response.json()
    assert body["status"] == "failed"
    assert "ground-truth" in body["error"]


def test_accepted_without_wait(client, tmp_path):
    response = client.post("/api/depth/synth", json={"scene": SMALL_SCENE, "out": str(tmp_path / "bg")})
    body = response.json()
    assert body["kind"] == "synth"
    assert body["status"] in ("pending", "running", "completed")
