"""Append-only JSONL session log and deterministic replay.

One event per line: ``{"event": ..., "t": ..., "payload": {...}}``. The
first line is a header carrying the full config and every derived seed, so
a single file suffices to rebuild the session bit-exactly: replaying the
recorded choices through the engine re-derives the same batch, queries, and
belief populations. Appends are flushed and fsynced before the caller may
acknowledge (write-ahead rule).
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Sequence

import numpy as np

from .engine import (
    SessionConfig,
    SessionState,
    initialize,
    present_next_query,
    submit_choice,
)
from .profiles import TorqueProfileFeatures, profiles_from_json, profiles_to_json

EVENT_TYPES = (
    "header",
    "batch_created",
    "query_presented",
    "choice",
    "belief_snapshot",
    "finished",
    "validation_result",
)


class LogFormatError(ValueError):
    """Structurally invalid session log."""


class ReplayMismatch(AssertionError):
    """Replay re-derived different queries or beliefs than the log records."""


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def make_event(event: str, payload: dict, t: str | None = None) -> dict:
    if event not in EVENT_TYPES:
        raise ValueError(f"unknown event type {event!r}")
    return {"event": event, "t": t if t is not None else utc_now(), "payload": payload}


class SessionLogWriter:
    """Durable appender; one JSON object per line, fsync before returning."""

    def __init__(self, path):
        self.path = str(path)
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, event: str, payload: dict, t: str | None = None) -> dict:
        record = make_event(event, payload, t)
        self._fh.write(json.dumps(record) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())
        return record

    def close(self) -> None:
        self._fh.close()


def read_log(path) -> list[dict]:
    events = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise LogFormatError(f"line {lineno}: {e}") from None
    return events


@dataclass
class SessionRecord:
    """Structured view of a parsed session log."""

    header: dict
    batch: list[TorqueProfileFeatures] = field(default_factory=list)
    queries: list[dict] = field(default_factory=list)
    choices: list[dict] = field(default_factory=list)
    snapshots: list[dict] = field(default_factory=list)
    finished: dict | None = None
    validation: list[dict] = field(default_factory=list)

    @property
    def config(self) -> SessionConfig:
        return SessionConfig.from_dict(self.header["config"])

    @classmethod
    def from_events(cls, events: Sequence[dict]) -> "SessionRecord":
        if not events:
            raise LogFormatError("empty session log")
        if events[0].get("event") != "header":
            raise LogFormatError("first event must be the header")
        record = cls(header=events[0]["payload"])
        for e in events[1:]:
            kind, payload = e.get("event"), e.get("payload", {})
            if kind == "batch_created":
                record.batch = profiles_from_json(payload["profiles"])
            elif kind == "query_presented":
                record.queries.append(payload)
            elif kind == "choice":
                record.choices.append(payload)
            elif kind == "belief_snapshot":
                record.snapshots.append(payload)
            elif kind == "finished":
                record.finished = payload
            elif kind == "validation_result":
                record.validation.append(payload)
            elif kind not in EVENT_TYPES:
                raise LogFormatError(f"unknown event type {kind!r}")
        return record

    @classmethod
    def from_path(cls, path) -> "SessionRecord":
        return cls.from_events(read_log(path))

    def presented_indices(self) -> set[int]:
        """Batch indices of every profile shown during the comparisons."""
        out: set[int] = set()
        for q in self.queries:
            out.add(int(q["a_index"]))
            out.add(int(q["b_index"]))
        return out

    def chosen_indices(self) -> set[int]:
        """Batch indices selected at least once during the comparisons."""
        out: set[int] = set()
        for q, c in zip(self.queries, self.choices):
            out.add(int(q["a_index" if c["chosen"] == "A" else "b_index"]))
        return out


def state_events(state: SessionState) -> dict:
    """Payload builders shared by the service and the simulator."""
    return {
        "query_presented": {
            "iteration": state.iteration,
            "a_index": state.query_indices[0],
            "b_index": state.query_indices[1],
        },
        "belief_snapshot": state.belief.to_dict(),
    }


def replay(events: Sequence[dict], verify: bool = True) -> SessionState:
    """Rebuild the final session state from a log.

    Re-initializes from the header config and feeds the recorded choices
    through the engine. With ``verify`` (default), every re-derived batch
    profile, query pair, and belief population must match the logged one
    bit-exactly, else :class:`ReplayMismatch`.
    """
    record = SessionRecord.from_events(list(events))
    state = initialize(record.config)
    if verify and record.batch:
        logged = [p.to_dict() for p in record.batch]
        if logged != profiles_to_json(state.batch):
            raise ReplayMismatch("re-derived batch differs from the log")
    snapshot_iter = iter(record.snapshots)
    for k, (q, c) in enumerate(zip(record.queries, record.choices)):
        if state.phase == "initialized":
            state = present_next_query(state)
        if verify:
            if (state.query_indices[0], state.query_indices[1]) != (
                int(q["a_index"]), int(q["b_index"])
            ):
                raise ReplayMismatch(
                    f"query {k}: re-derived pair {state.query_indices} != "
                    f"logged ({q['a_index']}, {q['b_index']})"
                )
        state = submit_choice(
            state, c["chosen"], responder=c.get("responder", "human")
        )
        if verify:
            snap = next(snapshot_iter, None)
            if snap is not None and not np.array_equal(
                np.array(snap["samples"]), state.belief.samples
            ):
                raise ReplayMismatch(f"belief snapshot {k} differs after replay")
    return state


def replay_path(path, verify: bool = True) -> SessionState:
    return replay(read_log(path), verify=verify)


def write_events(path, events: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in events:
            f.write(json.dumps(e) + "\n")
