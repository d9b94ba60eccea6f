import json
import threading
import time

import httpx
import numpy as np
import pytest
import torch
import uvicorn

from rollforge import world
from rollforge.checkpoint import save_checkpoint
from rollforge.denoiser import Denoiser, DenoiserConfig
from rollforge.service import ServiceConfig, create_app


def make_checkpoint(path):
    config = DenoiserConfig(dim_model=16, num_layers=2, num_heads=2,
                            frame_dim=4, num_regimes=4)
    model = Denoiser(config, seed=0)
    gen = torch.Generator().manual_seed(11)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.empty_like(p).normal_(0.0, 0.05, generator=gen))
    angles = [0.0, np.pi / 12, np.pi / 8, np.pi / 6]
    metadata = {
        "pretrained": False, "distilled": False,
        "world": [world.make_regime(i, dim=4, rotation_angle=a).to_config()
                  for i, a in enumerate(angles)],
        "schedule": {"shift_k": 5.0, "num_steps": 5},
        "cache": {"sink_frames": 1, "recent_frames": 1, "window_frames": 5},
    }
    return save_checkpoint(path, model, metadata)


class Server:
    """Real uvicorn on an ephemeral port; the in-process test client
    cannot consume an endless event stream."""

    def __init__(self, config: ServiceConfig):
        self.app = create_app(config)
        self._server = uvicorn.Server(uvicorn.Config(self.app, host="127.0.0.1",
                                                     port=0, log_level="error"))
        self.thread = threading.Thread(target=self._server.run, daemon=True)
        self.thread.start()
        deadline = time.time() + 10
        while not self._server.started:
            if time.time() > deadline or not self.thread.is_alive():
                raise RuntimeError("server failed to start")
            time.sleep(0.01)
        port = self._server.servers[0].sockets[0].getsockname()[1]
        self.base = f"http://127.0.0.1:{port}"

    def stop(self, timeout=5.0):
        t0 = time.perf_counter()
        self._server.should_exit = True
        self.thread.join(timeout)
        return time.perf_counter() - t0


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    return str(make_checkpoint(tmp_path_factory.mktemp("ckpt") / "svc.json"))


@pytest.fixture(scope="module")
def paced(checkpoint):
    server = Server(ServiceConfig(checkpoint=checkpoint, fps=60.0))
    yield server
    server.stop()


@pytest.fixture(scope="module")
def unpaced(checkpoint):
    server = Server(ServiceConfig(checkpoint=checkpoint, fps=0.0))
    yield server
    server.stop()


@pytest.fixture()
def client(paced):
    with httpx.Client(base_url=paced.base, timeout=10.0) as c:
        yield c


def collect_events(client, sid, count, timeout=30.0):
    events = []
    with client.stream("GET", f"/streams/{sid}/events",
                       timeout=httpx.Timeout(10.0, read=timeout)) as response:
        assert response.status_code == 200
        assert response.headers["content-type"].startswith("text/event-stream")
        for line in response.iter_lines():
            if line.startswith("data: "):
                events.append(json.loads(line[len("data: "):]))
                if len(events) >= count:
                    break
    return events


def create(client, **kwargs):
    response = client.post("/streams", json=kwargs)
    assert response.status_code == 200, response.text
    return response.json()


def test_config_endpoint(client, checkpoint):
    info = client.get("/config").json()
    assert info["checkpoint"] == checkpoint
    assert info["fps"] == 60.0
    assert info["num_regimes"] == 4 and info["frame_dim"] == 4
    assert info["regime_labels"] == [0, 1, 2, 3]
    assert info["metadata"]["cache"]["window_frames"] == 5


def test_first_event_and_shape(client):
    made = create(client, condition=2, seed=5)
    events = collect_events(client, made["id"], 3)
    first = events[0]
    assert first["frame_index"] == 1
    assert set(first) == {"frame_index", "latent", "projection_2d", "condition",
                          "emit_latency_ms", "dropped"}
    assert len(first["latent"]) == 4
    assert first["projection_2d"] == first["latent"][:2]
    assert first["condition"] == 2
    assert first["emit_latency_ms"] > 0
    client.delete(f"/streams/{made['id']}")


def test_event_stream_gapless_when_consuming(client):
    made = create(client, condition=0, seed=1)
    events = collect_events(client, made["id"], 40)
    indices = [e["frame_index"] for e in events]
    assert indices == list(range(1, 41))
    assert all(e["dropped"] == 0 for e in events)
    client.delete(f"/streams/{made['id']}")


def test_thousand_events_ordered_with_drop_accounting(unpaced):
    with httpx.Client(base_url=unpaced.base, timeout=10.0) as client:
        made = create(client, condition=1, seed=2)
        events = collect_events(client, made["id"], 1000, timeout=120.0)
        prev = 0
        for event in events:
            assert event["frame_index"] == prev + 1 + event["dropped"]
            prev = event["frame_index"]
        client.delete(f"/streams/{made['id']}")


def test_stalled_client_drops_oldest_and_reports(unpaced):
    with httpx.Client(base_url=unpaced.base, timeout=10.0) as client:
        made = create(client, condition=0, seed=3)
        deadline = time.time() + 10
        while time.time() < deadline:
            emitted = client.get(f"/streams/{made['id']}/stats").json()["frames_emitted"]
            if emitted > 400:
                break
            time.sleep(0.05)
        assert emitted > 400, "generator should outrun an absent client"
        events = collect_events(client, made["id"], 5)
        assert events[0]["dropped"] > 0
        assert events[0]["frame_index"] == 1 + events[0]["dropped"]
        prev = events[0]["frame_index"]
        for event in events[1:]:
            assert event["frame_index"] == prev + 1 + event["dropped"]
            prev = event["frame_index"]
        client.delete(f"/streams/{made['id']}")


def test_switch_applies_strictly_after_ack(client):
    made = create(client, condition=0, seed=4)
    sid = made["id"]
    threading.Timer(0.3, lambda: client.post(f"/streams/{sid}/condition",
                                             json={"label": 3})).start()
    events = collect_events(client, sid, 60)
    labels = {e["frame_index"]: e["condition"] for e in events}
    switched = [i for i, lab in labels.items() if lab == 3]
    assert switched, "switch should land within the consumed window"
    boundary = min(switched)
    assert all(lab == 0 for i, lab in labels.items() if i < boundary)
    assert all(lab == 3 for i, lab in labels.items() if i >= boundary)
    client.delete(f"/streams/{sid}")


def test_switch_ack_frame_bounds_new_label(client):
    made = create(client, condition=1, seed=6)
    sid = made["id"]
    acked = client.post(f"/streams/{sid}/condition", json={"label": 2}).json()
    k = acked["acknowledged_at_frame"]
    assert acked["label"] == 2
    events = collect_events(client, sid, k + 20)
    for event in events:
        if event["frame_index"] >= k + 1:
            assert event["condition"] == 2
    client.delete(f"/streams/{sid}")


def test_sessions_are_isolated_and_seeded(client):
    a = create(client, condition=0, seed=7)
    b = create(client, condition=0, seed=8)
    c = create(client, condition=0, seed=7)
    ev_a = collect_events(client, a["id"], 5)
    ev_b = collect_events(client, b["id"], 5)
    ev_c = collect_events(client, c["id"], 5)
    assert ev_a[0]["latent"] != ev_b[0]["latent"]
    for x, y in zip(ev_a, ev_c):
        assert x["latent"] == y["latent"]
        assert x["frame_index"] == y["frame_index"]
    for sid in (a["id"], b["id"], c["id"]):
        client.delete(f"/streams/{sid}")


def test_stats_reports_perf_and_drift(client):
    made = create(client, condition=0, seed=9)
    sid = made["id"]
    deadline = time.time() + 10
    stats = None
    while time.time() < deadline:
        stats = client.get(f"/streams/{sid}/stats").json()
        if stats["frames_emitted"] >= 16:
            break
        time.sleep(0.05)
    assert stats["frames_emitted"] >= 16
    assert stats["condition"] == 0
    perf = stats["perf"]
    assert perf["steady_fps"] > 0 and perf["steady_latency_s"] > 0
    assert abs(perf["steady_fps"] * perf["steady_latency_s"] - 1.0) < 0.05
    drift = stats["drift"]
    assert set(drift) == {"fd_first", "fd_last", "delta_drift", "flicker", "segments"}
    assert drift["delta_drift"] == abs(drift["fd_last"] - drift["fd_first"])
    client.delete(f"/streams/{sid}")


def test_error_statuses(client):
    assert client.get("/streams/nope/stats").status_code == 404
    assert client.get("/streams/nope/events").status_code == 404
    assert client.post("/streams/nope/condition", json={"label": 1}).status_code == 404
    assert client.delete("/streams/nope").status_code == 404

    made = create(client, condition=0, seed=10)
    sid = made["id"]
    assert client.post(f"/streams/{sid}/condition", json={}).status_code == 400
    assert client.post(f"/streams/{sid}/condition",
                       json={"label": "x"}).status_code == 400
    assert client.post(f"/streams/{sid}/condition", json={"label": 9}).status_code == 422
    assert client.post(f"/streams/{sid}/condition", json={"label": -1}).status_code == 422
    assert client.post("/streams", json={"condition": 99}).status_code == 422
    assert client.post("/streams", json={"condition": "x"}).status_code == 400
    assert client.post("/streams", json={"checkpoint": "missing.json"}).status_code == 400
    client.delete(f"/streams/{sid}")


def test_delete_stops_session(client, paced):
    made = create(client, condition=0, seed=11)
    sid = made["id"]
    session = paced.app.state.sessions[sid]
    out = client.delete(f"/streams/{sid}").json()
    assert out == {"id": sid, "stopped": True}
    assert client.get(f"/streams/{sid}/stats").status_code == 404
    session.thread.join(2.0)
    assert not session.thread.is_alive()


def test_shutdown_terminates_sessions_quickly(checkpoint):
    server = Server(ServiceConfig(checkpoint=checkpoint, fps=30.0))
    with httpx.Client(base_url=server.base, timeout=10.0) as client:
        sids = [create(client, condition=0, seed=s)["id"] for s in (12, 13)]
        threads = [server.app.state.sessions[sid].thread for sid in sids]
    elapsed = server.stop(timeout=6.0)
    assert not server.thread.is_alive()
    assert elapsed < 3.5, f"shutdown took {elapsed:.1f}s"
    for thread in threads:
        assert not thread.is_alive()
