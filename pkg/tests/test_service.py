import io
import json
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from fastapi.testclient import TestClient

from prefgait.service import ServiceConfig, create_app
from prefgait.gait import write_trace_csv
from prefgait.profiles import TorqueProfileFeatures
from prefgait.simulate import synthesize_trace


class FakeClock:
    def __init__(self):
        self.now = datetime(2026, 1, 5, 12, 0, 0, tzinfo=timezone.utc)

    def __call__(self):
        return self.now

    def advance(self, seconds):
        self.now = self.now + timedelta(seconds=seconds)


FAST_CONFIG = {
    "comparisons": 3,
    "n_belief_samples": 40,
    "burn_in": 60,
    "thin": 3,
    "seed": 42,
}

ORACLE = {"w_star": [1, 1, 1, 1, 1, 1], "beta": "inf", "seed": 5}


@pytest.fixture()
def service(tmp_path):
    clock = FakeClock()
    app = create_app(ServiceConfig(data_dir=str(tmp_path / "data")),
                     clock=clock, sse_keepalive_s=0.05)
    client = TestClient(app)
    return client, clock, app


@pytest.fixture()
def live_server(tmp_path):
    """Real uvicorn server in a thread, for incremental SSE reads."""
    import socket
    import threading
    import time

    import uvicorn

    clock = FakeClock()
    app = create_app(ServiceConfig(data_dir=str(tmp_path / "live-data")),
                     clock=clock, sse_keepalive_s=0.05)
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port,
                                           log_level="error"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:  # pragma: no cover
            raise RuntimeError("uvicorn did not start")
        time.sleep(0.02)
    yield f"http://127.0.0.1:{port}", clock
    server.should_exit = True
    thread.join(timeout=5)


def sse_events(client, session_id, offset=0):
    """Drain the stream without following the live tail."""
    response = client.get(
        f"/sessions/{session_id}/events",
        params={"offset": offset, "follow": 0},
    )
    assert response.status_code == 200
    out = []
    for line in response.text.splitlines():
        if line.startswith("data: "):
            out.append(json.loads(line[len("data: "):]))
    return out


def trace_csv_for(features_dict, n_cycles=6):
    trace = synthesize_trace(TorqueProfileFeatures.from_dict(features_dict),
                             n_cycles=n_cycles)
    buf = io.StringIO()
    write_trace_csv(trace, _Writable(buf))
    return buf.getvalue()


class _Writable:
    """Adapter so write_trace_csv's open() call is bypassed."""

    def __init__(self, buf):
        self.buf = buf

    def __fspath__(self):  # pragma: no cover
        raise TypeError

    def __enter__(self):
        return self.buf

    def __exit__(self, *exc):
        return False


def test_health(service):
    client, _, _ = service
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json()["status"] == "ok"


class TestCreateSession:
    def test_live_session_starts_awaiting(self, service):
        client, _, _ = service
        r = client.post("/sessions", json={"config": FAST_CONFIG, "mode": "live"})
        assert r.status_code == 201
        body = r.json()
        assert body["phase"] == "awaiting_choice"
        assert body["iteration"] == 0
        assert not body["finished"]

    def test_malformed_config_rejected_with_diagnostics(self, service):
        client, _, _ = service
        r = client.post("/sessions", json={
            "config": {"comparisons": 0}, "mode": "live",
        })
        assert r.status_code == 400
        assert "comparisons" in str(r.json()["detail"])

    def test_simulated_requires_oracle(self, service):
        client, _, _ = service
        r = client.post("/sessions", json={"config": FAST_CONFIG,
                                           "mode": "simulated"})
        assert r.status_code == 400
        assert "oracle" in str(r.json()["detail"])

    def test_simulated_autoruns_to_completion(self, service):
        client, _, _ = service
        r = client.post("/sessions", json={
            "config": FAST_CONFIG, "mode": "simulated", "oracle": ORACLE,
        })
        assert r.status_code == 201
        body = r.json()
        assert body["finished"]
        assert body["final_index"] is not None
        events = sse_events(client, body["session_id"])
        kinds = [e["event"] for e in events]
        assert kinds.count("choice") == 3
        assert kinds.count("validation_result") == 12
        assert kinds[-13] == "finished"

    def test_unknown_mode_rejected(self, service):
        client, _, _ = service
        r = client.post("/sessions", json={"config": {}, "mode": "batch"})
        assert r.status_code == 400


class TestQueryEndpoint:
    def test_payload_structure(self, service):
        client, _, _ = service
        sid = client.post("/sessions", json={
            "config": FAST_CONFIG, "mode": "live",
        }).json()["session_id"]
        r = client.get(f"/sessions/{sid}/query")
        assert r.status_code == 200
        q = r.json()
        for opt in ("option_a", "option_b"):
            assert len(q[opt]["curve"]["phase"]) == 1000
            assert len(q[opt]["curve"]["torque_nm"]) == 1000
            assert set(q[opt]["features"]) == {
                "f1", "f2", "f3", "f4", "f5", "f6", "perturbed",
            }
        assert q["timing"]["exposure_s"] == 20.0
        assert q["timing"]["washout_s"] == 5.0
        assert q["timing"]["earliest_choice_at"] is not None
        assert q["a_index"] != q["b_index"]

    def test_conflict_after_finish_names_state(self, service):
        client, _, _ = service
        sid = client.post("/sessions", json={
            "config": FAST_CONFIG, "mode": "simulated", "oracle": ORACLE,
        }).json()["session_id"]
        r = client.get(f"/sessions/{sid}/query")
        assert r.status_code == 409
        assert r.json()["detail"]["phase"] == "validating"

    def test_unknown_session(self, service):
        client, _, _ = service
        assert client.get("/sessions/nope/query").status_code == 404


class TestChoiceEndpoint:
    def _create_live(self, client):
        return client.post("/sessions", json={
            "config": FAST_CONFIG, "mode": "live",
        }).json()["session_id"]

    def test_timing_gate_enforced(self, service):
        client, clock, _ = service
        sid = self._create_live(client)
        r = client.post(f"/sessions/{sid}/choice", json={"chosen": "A"})
        assert r.status_code == 409
        assert "early" in str(r.json()["detail"]).lower()
        clock.advance(2 * 20.0 + 5.0 + 0.1)
        r = client.post(f"/sessions/{sid}/choice", json={"chosen": "A"})
        assert r.status_code == 200
        assert r.json()["iteration"] == 1

    def test_full_session_finishes(self, service):
        client, clock, _ = service
        sid = self._create_live(client)
        for k in range(3):
            clock.advance(45.1)
            r = client.post(f"/sessions/{sid}/choice",
                            json={"chosen": "A", "iteration": k})
            assert r.status_code == 200
        body = r.json()
        assert body["finished"]
        assert body["final_features"]["f1"] >= 5.0
        r = client.post(f"/sessions/{sid}/choice", json={"chosen": "A"})
        assert r.status_code == 409

    def test_stale_iteration_is_conflict(self, service):
        client, clock, _ = service
        sid = self._create_live(client)
        clock.advance(45.1)
        assert client.post(f"/sessions/{sid}/choice",
                           json={"chosen": "A", "iteration": 0}).status_code == 200
        clock.advance(45.1)
        r = client.post(f"/sessions/{sid}/choice",
                        json={"chosen": "A", "iteration": 0})
        assert r.status_code == 409
        assert "iteration" in str(r.json()["detail"])

    def test_invalid_choice_value(self, service):
        client, clock, _ = service
        sid = self._create_live(client)
        clock.advance(45.1)
        assert client.post(f"/sessions/{sid}/choice",
                           json={"chosen": "C"}).status_code == 400


class TestEventStream:
    def test_offset_zero_replays_full_history(self, service):
        client, _, _ = service
        sid = client.post("/sessions", json={
            "config": FAST_CONFIG, "mode": "simulated", "oracle": ORACLE,
        }).json()["session_id"]
        events = sse_events(client, sid)
        kinds = [e["event"] for e in events]
        assert kinds[0] == "header"
        assert kinds[1] == "batch_created"
        assert "finished" in kinds

    def test_two_subscribers_identical(self, service):
        client, _, _ = service
        sid = client.post("/sessions", json={
            "config": FAST_CONFIG, "mode": "simulated", "oracle": ORACLE,
        }).json()["session_id"]
        assert sse_events(client, sid) == sse_events(client, sid)

    def test_offset_resume_no_gaps_or_duplicates(self, service):
        client, _, _ = service
        sid = client.post("/sessions", json={
            "config": FAST_CONFIG, "mode": "simulated", "oracle": ORACLE,
        }).json()["session_id"]
        full = sse_events(client, sid)
        head = sse_events(client, sid)[:5]
        tail = sse_events(client, sid, offset=5)
        assert head + tail == full

    def test_offset_beyond_end_then_live_tail(self, live_server):
        # incremental reads need a real socket; TestClient buffers streams
        import httpx

        base, clock = live_server
        with httpx.Client(base_url=base, timeout=10.0) as client:
            sid = client.post("/sessions", json={
                "config": FAST_CONFIG, "mode": "live",
            }).json()["session_id"]
            current = len(sse_events(client, sid))
            assert sse_events(client, sid, offset=current) == []
            with client.stream(
                "GET", f"/sessions/{sid}/events",
                params={"offset": current, "follow": 1},
            ) as response:
                lines = response.iter_lines()
                clock.advance(45.1)
                post = client.post(f"/sessions/{sid}/choice",
                                   json={"chosen": "B"})
                assert post.status_code == 200
                got = None
                for _ in range(400):
                    line = next(lines)
                    if line.startswith("data: "):
                        got = json.loads(line[len("data: "):])
                        break
                assert got is not None
                assert got["event"] == "choice"
                assert got["payload"]["chosen"] == "B"


class TestTraceIngestion:
    def _session_with_query(self, client):
        body = client.post("/sessions", json={
            "config": FAST_CONFIG, "mode": "live",
        }).json()
        sid = body["session_id"]
        q = client.get(f"/sessions/{sid}/query").json()
        return sid, q

    def test_ingest_and_metrics(self, service):
        client, _, _ = service
        sid, q = self._session_with_query(client)
        idx = q["a_index"]
        csv_text = trace_csv_for(q["option_a"]["features"])
        r = client.post(f"/sessions/{sid}/traces/{idx}", content=csv_text)
        assert r.status_code == 200
        body = r.json()
        assert body["profile_index"] == idx
        assert not body["replaced"]
        assert body["pr_mean"] is not None
        assert body["n_cycles"] == 12

    def test_reingest_replaces(self, service):
        client, _, _ = service
        sid, q = self._session_with_query(client)
        idx = q["a_index"]
        csv_text = trace_csv_for(q["option_a"]["features"])
        client.post(f"/sessions/{sid}/traces/{idx}", content=csv_text)
        r = client.post(f"/sessions/{sid}/traces/{idx}", content=csv_text)
        assert r.json()["replaced"]

    def test_trace_without_contact_rejected(self, service):
        client, _, _ = service
        sid, q = self._session_with_query(client)
        text = ("time_s,hip_l_deg,hip_r_deg,knee_l_deg,knee_r_deg,"
                "tau_l_nm,tau_r_nm\n"
                + "\n".join(f"{k/100},0,0,0,0,1,1" for k in range(200)) + "\n")
        r = client.post(f"/sessions/{sid}/traces/{q['a_index']}", content=text)
        assert r.status_code == 400
        assert "contact" in str(r.json()["detail"])

    def test_schema_error_carries_position(self, service):
        client, _, _ = service
        sid, q = self._session_with_query(client)
        text = "time_s,hip_l_deg\n0,0\n"
        r = client.post(f"/sessions/{sid}/traces/{q['a_index']}", content=text)
        assert r.status_code == 400
        assert "missing required columns" in str(r.json()["detail"])

    def test_profile_index_bounds(self, service):
        client, _, _ = service
        sid, q = self._session_with_query(client)
        r = client.post(f"/sessions/{sid}/traces/999", content="x")
        assert r.status_code == 404


class TestReport:
    def test_report_contents(self, service):
        client, _, _ = service
        sid = client.post("/sessions", json={
            "config": FAST_CONFIG, "mode": "simulated", "oracle": ORACLE,
        }).json()["session_id"]
        report = client.get(f"/sessions/{sid}/report").json()
        assert report["finished"]
        assert len(report["weight_trajectory"]) == 3
        assert report["validation"]["per_target"]
        assert report["chosen_vs_discarded"] is None  # no traces ingested
        assert report["config"]["comparisons"] == 3


class TestRecovery:
    def test_write_ahead_recovery_reproduces_belief(self, service, tmp_path):
        client, clock, app = service
        sid = client.post("/sessions", json={
            "config": FAST_CONFIG, "mode": "live",
        }).json()["session_id"]
        for k in range(2):
            clock.advance(45.1)
            client.post(f"/sessions/{sid}/choice", json={"chosen": "A"})
        manager = app.state.manager
        original = manager.sessions[sid]
        log_path = manager.data_dir / f"{sid}.jsonl"

        # crash: a fresh manager on a copied log (ack never happened)
        import shutil
        recovered_path = tmp_path / "recovered.jsonl"
        shutil.copy(log_path, recovered_path)
        app2 = create_app(ServiceConfig(data_dir=str(tmp_path / "data2")),
                          clock=clock)
        recovered = app2.state.manager.recover(recovered_path)
        assert np.array_equal(
            recovered.state.belief.samples, original.state.belief.samples
        )
        assert recovered.state.iteration == 2
        assert recovered.phase == "awaiting_choice"
        assert recovered.state.query_indices == original.state.query_indices

    def test_identical_choices_yield_identical_logs(self, service, tmp_path):
        # two sessions with equal seeds and the same choices must log the
        # same records modulo timestamps and session ids
        client, clock, app = service
        choices = ["A", "B", "A"]
        sids = []
        for _ in range(2):
            sid = client.post("/sessions", json={
                "config": FAST_CONFIG, "mode": "live",
            }).json()["session_id"]
            for k, c in enumerate(choices):
                clock.advance(45.1)
                assert client.post(f"/sessions/{sid}/choice",
                                   json={"chosen": c}).status_code == 200
            sids.append(sid)

        def normalized(sid):
            events = sse_events(client, sid)
            out = []
            for e in events:
                payload = dict(e["payload"])
                payload.pop("session_id", None)
                out.append((e["event"], json.dumps(payload, sort_keys=True)))
            return out

        assert normalized(sids[0]) == normalized(sids[1])
