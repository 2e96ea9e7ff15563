import math

import pytest
from fastapi.testclient import TestClient

from main import app

client = TestClient(app)

SMALL_SIM = {"simulation": {"n_steps": 100, "snapshot_stride": 50}}


def test_openapi_lists_routers():
    paths = client.get("/openapi.json").json()["paths"]
    assert "/api/v1/oracle/" in paths
    assert "/api/v1/experiments/simulate" in paths


def test_oracle_for_z_only_potential():
    response = client.get("/api/v1/oracle/", params={"family": "z_only", "b": 1.0, "nodes": 16, "y_nodes": 32})
    assert response.status_code == 200
    body = response.json()
    assert len(body["a_star"]) == 16
    for z, force in zip(body["z"], body["grad_a_star"]):
        assert force[0] == pytest.approx(-math.sin(z[0]), abs=1e-10)


@pytest.mark.parametrize("params", [{"family": "quartic"}, {"nodes": 2}, {"y_nodes": 4096}])
def test_oracle_rejects_bad_queries(params):
    assert client.get("/api/v1/oracle/", params=params).status_code == 422


def test_fixed_point_endpoint():
    response = client.post("/api/v1/experiments/fixed-point", json={"fixed_point": {"epsilons": [0.4]}})
    assert response.status_code == 200
    rows = response.json()["rows"]
    assert len(rows) == 1
    assert rows[0]["converged"] is True


def test_simulate_endpoint_returns_exact_normalization():
    response = client.post("/api/v1/experiments/simulate", json=SMALL_SIM)
    assert response.status_code == 200
    body = response.json()
    assert body["n_steps"] == 100
    assert body["estimates"]["one"]["value"] == 1.0


def test_simulate_endpoint_caps_run_length():
    response = client.post("/api/v1/experiments/simulate", json={"simulation": {"n_steps": 300_000}})
    assert response.status_code == 422
    assert "command line" in response.json()["detail"]


def test_flow_endpoint_reports_unstable_step():
    response = client.post("/api/v1/experiments/flow", json={"flow": {"dt": 1.0}})
    assert response.status_code == 500


@pytest.mark.parametrize(
    "body",
    [
        {"verify": {"sobolev_p": [1.0]}},
        {"kernel": {"epsilon": 1.5}},
        {"grid": {"bandwidth": 3}},
    ],
)
def test_invalid_configs_are_rejected(body):
    assert client.post("/api/v1/experiments/fixed-point", json=body).status_code == 422
