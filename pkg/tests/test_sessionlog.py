import json
import math

import numpy as np
import pytest

from prefgait.engine import SessionConfig
from prefgait.oracle import SimulatedUser
from prefgait.preference import unit
from prefgait.sessionlog import (
    LogFormatError,
    ReplayMismatch,
    SessionLogWriter,
    SessionRecord,
    make_event,
    read_log,
    replay,
    replay_path,
    write_events,
)
from prefgait.simulate import run_simulated_session


def simulated_events(tmp_path, seed=21, comparisons=4, log_name="s.jsonl"):
    cfg = SessionConfig(seed=seed, comparisons=comparisons,
                        n_belief_samples=50, burn_in=80, thin=4)
    user = SimulatedUser(w_star=unit(np.arange(1.0, 7.0)), beta=3.0, seed=seed)
    path = tmp_path / log_name
    result = run_simulated_session(cfg, user, log_path=path)
    return path, result


class TestWriterReader:
    def test_append_and_read(self, tmp_path):
        path = tmp_path / "log.jsonl"
        w = SessionLogWriter(path)
        w.append("header", {"config": {}, "mode": "live"})
        w.append("choice", {"iteration": 0, "chosen": "A"})
        w.close()
        events = read_log(path)
        assert [e["event"] for e in events] == ["header", "choice"]
        assert all("t" in e for e in events)

    def test_unknown_event_type_rejected(self):
        with pytest.raises(ValueError, match="unknown event"):
            make_event("telemetry", {})

    def test_malformed_line_reports_position(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"event": "header", "t": "x", "payload": {}}\nnot json\n')
        with pytest.raises(LogFormatError, match="line 2"):
            read_log(path)


class TestSessionRecord:
    def test_structured_view(self, tmp_path):
        path, result = simulated_events(tmp_path)
        record = SessionRecord.from_path(path)
        assert len(record.batch) == 40
        assert len(record.queries) == 4
        assert len(record.choices) == 4
        assert len(record.snapshots) == 4
        assert record.finished is not None
        assert len(record.validation) == 12
        assert record.config.comparisons == 4

    def test_presented_and_chosen_indices(self, tmp_path):
        path, result = simulated_events(tmp_path)
        record = SessionRecord.from_path(path)
        presented = record.presented_indices()
        chosen = record.chosen_indices()
        assert chosen <= presented
        assert len(presented) <= 8

    def test_header_required(self):
        with pytest.raises(LogFormatError, match="header"):
            SessionRecord.from_events(
                [make_event("choice", {"iteration": 0, "chosen": "A"})]
            )

    def test_empty_log_rejected(self):
        with pytest.raises(LogFormatError, match="empty"):
            SessionRecord.from_events([])


class TestReplay:
    def test_replay_reproduces_final_belief_bit_exactly(self, tmp_path):
        path, result = simulated_events(tmp_path)
        state = replay_path(path)
        assert state.phase == result.state.phase or state.phase == "finished"
        assert np.array_equal(state.belief.samples, result.state.belief.samples)
        assert state.final_index == result.state.final_index

    def test_replay_verifies_snapshots(self, tmp_path):
        path, _ = simulated_events(tmp_path)
        events = read_log(path)
        # corrupt one recorded belief sample
        for e in events:
            if e["event"] == "belief_snapshot":
                e["payload"]["samples"][0][0] += 1e-9
                break
        with pytest.raises(ReplayMismatch, match="belief"):
            replay(events)

    def test_replay_verifies_queries(self, tmp_path):
        path, _ = simulated_events(tmp_path)
        events = read_log(path)
        for e in events:
            if e["event"] == "query_presented":
                e["payload"]["a_index"] = (e["payload"]["a_index"] + 1) % 40
                break
        with pytest.raises(ReplayMismatch, match="query"):
            replay(events)

    def test_replay_detects_batch_drift(self, tmp_path):
        path, _ = simulated_events(tmp_path)
        events = read_log(path)
        for e in events:
            if e["event"] == "batch_created":
                e["payload"]["profiles"][0]["f1"] += 0.1
                break
        with pytest.raises(ReplayMismatch, match="batch"):
            replay(events)

    def test_partial_log_resumes_awaiting(self, tmp_path):
        path, _ = simulated_events(tmp_path, comparisons=5)
        events = read_log(path)
        # keep header, batch, and the first two query/choice/snapshot triples
        kept = events[:2]
        triples = 0
        for e in events[2:]:
            kept.append(e)
            if e["event"] == "belief_snapshot":
                triples += 1
                if triples == 2:
                    break
        state = replay(kept)
        assert state.iteration == 2
        assert state.phase == "awaiting_choice"

    def test_round_trip_write_events(self, tmp_path):
        path, _ = simulated_events(tmp_path)
        events = read_log(path)
        copy = tmp_path / "copy.jsonl"
        write_events(copy, events)
        assert read_log(copy) == events


def test_json_floats_round_trip_exactly():
    values = [0.1, 1 / 3, math.pi, 1e-17, -2.5e300]
    assert json.loads(json.dumps(values)) == values
