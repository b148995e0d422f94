"""HTTP + server-push service hosting live preference sessions.

Endpoints: POST /sessions, GET /sessions/{id}/query, POST
/sessions/{id}/choice, GET /sessions/{id}/events?offset=n (SSE stream),
POST /sessions/{id}/traces/{profile_idx}, GET /sessions/{id}/report, plus
GET /health and GET /sessions/{id} status.

Every state change is appended to the session's JSONL log (flushed and
fsynced) before the request is acknowledged, so a crashed service replays
its logs back to the exact same belief. Live sessions enforce the
exposure/washout schedule server-side: a choice is rejected until both
options' walking windows have elapsed. Commands are serialized per session;
event fan-out is read-only.
"""
from __future__ import annotations

import asyncio
import io
import json
import logging
import math
import os
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from .engine import (
    ConfigError,
    SessionConfig,
    SessionState,
    initialize,
    present_next_query,
    run_validation,
    submit_choice,
    summarize_validation,
)
from .gait import TraceSchemaError, UnsupportedInputError, load_trace_csv
from .metrics import chosen_vs_discarded_pr, trace_metrics
from .oracle import SimulatedUser
from .preference import Belief, posterior_summary
from .profiles import interpolate, profiles_to_json
from .sessionlog import SessionRecord, make_event, read_log, replay, utc_now
from .simulate import finished_payload, validation_payload

logger = logging.getLogger("prefgait.service")

ENV_PORT = "PREFGAIT_PORT"
ENV_DATA_DIR = "PREFGAIT_DATA_DIR"
DEFAULT_PORT = 8777


@dataclass
class ServiceConfig:
    port: int = DEFAULT_PORT
    data_dir: str = "./prefgait-data"

    @classmethod
    def load(cls, path=None) -> "ServiceConfig":
        """File config with environment overrides."""
        cfg = cls()
        if path is not None:
            with open(path, encoding="utf-8") as f:
                raw = json.load(f)
            cfg = cls(port=int(raw.get("port", cfg.port)),
                      data_dir=str(raw.get("data_dir", cfg.data_dir)))
        if os.environ.get(ENV_PORT):
            cfg.port = int(os.environ[ENV_PORT])
        if os.environ.get(ENV_DATA_DIR):
            cfg.data_dir = os.environ[ENV_DATA_DIR]
        return cfg


class _DurableLog:
    """Append-only JSONL file; every append is flushed and fsynced."""

    def __init__(self, path):
        self.path = Path(path)

    def append(self, record: dict) -> None:
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record) + "\n")
            f.flush()
            os.fsync(f.fileno())


@dataclass
class LiveSession:
    """One hosted session: engine state, event history, subscribers."""

    id: str
    mode: str  # live | simulated
    state: SessionState
    log: _DurableLog
    created_at: str
    oracle: SimulatedUser | None = None
    events: list = field(default_factory=list)
    presented_at: datetime | None = None
    busy: bool = False  # an update is in flight ("updating" to observers)
    validation: list = field(default_factory=list)  # ValidationOutcome
    traces: dict = field(default_factory=dict)  # profile idx -> TraceMetrics
    weight_trajectory: list = field(default_factory=list)
    lock: asyncio.Lock = field(default_factory=asyncio.Lock)
    cond: asyncio.Condition = field(default_factory=asyncio.Condition)

    @property
    def phase(self) -> str:
        return "updating" if self.busy else self.state.phase

    def earliest_choice_at(self) -> datetime | None:
        """Both options walked (2 exposures) plus the washout in between."""
        if self.presented_at is None:
            return None
        cfg = self.state.config
        return self.presented_at + timedelta(
            seconds=2 * cfg.exposure_s + cfg.washout_s
        )


class ApiError(Exception):
    def __init__(self, status: int, detail):
        self.status = status
        self.detail = detail


def _status_payload(session: LiveSession) -> dict:
    state = session.state
    payload = {
        "session_id": session.id,
        "mode": session.mode,
        "phase": session.phase,
        "iteration": state.iteration,
        "comparisons": state.config.comparisons,
        "finished": state.finished,
        "final_index": state.final_index,
    }
    if state.final_index is not None:
        payload["final_features"] = state.final_profile().to_dict()
    summary = posterior_summary(state.belief)
    payload["posterior"] = {
        "mean": summary.mean.tolist(),
        "std": summary.std.tolist(),
        "degenerate": summary.degenerate,
    }
    return payload


def _query_payload(session: LiveSession) -> dict:
    state = session.state
    cfg = state.config
    query = state.current_query

    def option(features):
        curve = interpolate(features, cfg.resolution, cfg.ranges)
        return {
            "features": features.to_dict(),
            "curve": {
                "phase": curve.phase.tolist(),
                "torque_nm": curve.torque_nm.tolist(),
            },
        }

    earliest = session.earliest_choice_at()
    return {
        "iteration": state.iteration,
        "comparisons": cfg.comparisons,
        "a_index": state.query_indices[0],
        "b_index": state.query_indices[1],
        "option_a": option(query.option_a),
        "option_b": option(query.option_b),
        "timing": {
            "exposure_s": cfg.exposure_s,
            "washout_s": cfg.washout_s,
            "presented_at": session.presented_at.isoformat()
            if session.presented_at else None,
            "earliest_choice_at": earliest.isoformat() if earliest else None,
            "enforced": session.mode == "live",
        },
    }


class SessionManager:
    def __init__(self, data_dir, clock: Callable[[], datetime] | None = None):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self.sessions: dict[str, LiveSession] = {}

    def _now_iso(self) -> str:
        return self.clock().isoformat()

    def get(self, session_id: str) -> LiveSession:
        session = self.sessions.get(session_id)
        if session is None:
            raise ApiError(404, f"unknown session {session_id!r}")
        return session

    async def _emit(self, session: LiveSession, event: str, payload: dict) -> None:
        """Persist a log line durably, then publish it to subscribers."""
        record = make_event(event, payload, t=self._now_iso())
        session.log.append(record)
        session.events.append(record)
        async with session.cond:
            session.cond.notify_all()

    async def create(self, config_raw: dict, mode: str,
                     oracle_raw: dict | None) -> LiveSession:
        if mode not in ("live", "simulated"):
            raise ApiError(400, f"mode must be 'live' or 'simulated', got {mode!r}")
        try:
            config = SessionConfig.from_dict(config_raw or {})
        except (ConfigError, TypeError, ValueError) as e:
            raise ApiError(400, f"invalid config: {e}")
        oracle = None
        if mode == "simulated":
            if oracle_raw is None:
                raise ApiError(400, "mode 'simulated' requires an oracle spec")
            try:
                oracle = SimulatedUser.from_dict(oracle_raw)
            except (KeyError, TypeError, ValueError) as e:
                raise ApiError(400, f"invalid oracle spec: {e}")
        session_id = uuid.uuid4().hex[:12]
        state = initialize(config)
        session = LiveSession(
            id=session_id,
            mode=mode,
            state=state,
            log=_DurableLog(self.data_dir / f"{session_id}.jsonl"),
            created_at=self._now_iso(),
            oracle=oracle,
        )
        self.sessions[session_id] = session
        await self._emit(session, "header", {
            "session_id": session_id,
            "config": config.to_dict(),
            "mode": mode,
            "oracle": oracle.to_dict() if oracle else None,
            "seeds": config.derived_seeds(),
            "schema": 1,
        })
        await self._emit(session, "batch_created",
                         {"profiles": profiles_to_json(state.batch)})
        await self._present(session)
        if mode == "simulated":
            await self._autorun(session)
        return session

    async def _present(self, session: LiveSession) -> None:
        session.state = present_next_query(session.state)
        session.presented_at = self.clock()
        await self._emit(session, "query_presented", {
            "iteration": session.state.iteration,
            "a_index": session.state.query_indices[0],
            "b_index": session.state.query_indices[1],
        })

    async def _record_choice(self, session: LiveSession, chosen: str,
                             responder: str) -> None:
        """Write-ahead the choice, update the belief, publish the fallout."""
        state = session.state
        await self._emit(session, "choice", {
            "iteration": state.iteration,
            "chosen": chosen,
            "responder": responder,
        })
        session.busy = True
        try:
            session.state = submit_choice(
                state, chosen, responder=responder, timestamp=self._now_iso()
            )
        finally:
            session.busy = False
        await self._emit(session, "belief_snapshot", session.state.belief.to_dict())
        summary = posterior_summary(session.state.belief)
        session.weight_trajectory.append({
            "iteration": session.state.iteration,
            "mean": summary.mean.tolist(),
        })
        if session.state.phase == "finished":
            session.presented_at = None
            await self._emit(session, "finished", finished_payload(session.state))
        else:
            session.presented_at = self.clock()
            await self._emit(session, "query_presented", {
                "iteration": session.state.iteration,
                "a_index": session.state.query_indices[0],
                "b_index": session.state.query_indices[1],
            })

    async def _autorun(self, session: LiveSession) -> None:
        cfg = session.state.config
        while not session.state.finished:
            answer = session.oracle.respond(session.state.current_query, cfg.ranges)
            await self._record_choice(session, answer, responder="oracle")
        if cfg.validation_targets:
            session.state, outcomes = run_validation(
                session.state,
                lambda q: session.oracle.respond(q, cfg.ranges),
            )
            session.validation = outcomes
            for o in outcomes:
                await self._emit(session, "validation_result", validation_payload(o))

    async def post_choice(self, session: LiveSession, body: dict) -> dict:
        chosen = body.get("chosen")
        if chosen not in ("A", "B"):
            raise ApiError(400, f"chosen must be 'A' or 'B', got {chosen!r}")
        if session.phase != "awaiting_choice":
            raise ApiError(409, {
                "error": "choice not accepted in the current state",
                "phase": session.phase,
            })
        expected = body.get("iteration")
        if expected is not None and int(expected) != session.state.iteration:
            raise ApiError(409, {
                "error": "iteration mismatch (stale or duplicate submission)",
                "phase": session.phase,
                "iteration": session.state.iteration,
            })
        if session.mode == "live":
            earliest = session.earliest_choice_at()
            now = self.clock()
            if earliest is not None and now < earliest:
                raise ApiError(409, {
                    "error": "too early: both options' exposure windows must "
                             "elapse before a choice is accepted",
                    "earliest_choice_at": earliest.isoformat(),
                    "now": now.isoformat(),
                })
        await self._record_choice(session, chosen, responder="human")
        return _status_payload(session)

    async def ingest_trace(self, session: LiveSession, profile_idx: int,
                           csv_text: str) -> dict:
        if not 0 <= profile_idx < len(session.state.batch):
            raise ApiError(404, f"profile index {profile_idx} outside batch")
        try:
            trace = load_trace_csv(io.StringIO(csv_text))
            tm = trace_metrics(trace)
        except TraceSchemaError as e:
            raise ApiError(400, f"trace CSV schema violation: {e}")
        except (UnsupportedInputError, ValueError) as e:
            raise ApiError(400, f"trace not usable: {e}")
        replaced = profile_idx in session.traces
        if replaced:
            logger.warning(
                "session %s: metrics for profile %d replaced by re-ingest",
                session.id, profile_idx,
            )
        session.traces[profile_idx] = tm
        return {
            "profile_index": profile_idx,
            "replaced": replaced,
            **tm.to_dict(),
        }

    def report(self, session: LiveSession) -> dict:
        state = session.state
        payload = _status_payload(session)
        payload["created_at"] = session.created_at
        payload["config"] = state.config.to_dict()
        payload["weight_trajectory"] = list(session.weight_trajectory)
        payload["validation"] = {
            "outcomes": [validation_payload(o) for o in session.validation],
            "per_target": summarize_validation(session.validation),
        }
        payload["profiles"] = {
            str(i): tm.to_dict() for i, tm in sorted(session.traces.items())
        }
        if session.traces:
            record = SessionRecord.from_events(session.events)
            try:
                cd = chosen_vs_discarded_pr(record, session.traces)

                def safe(x):
                    return x if math.isfinite(x) else None

                payload["chosen_vs_discarded"] = {
                    "chosen_mean_pr": safe(cd.chosen_mean_pr),
                    "discarded_mean_pr": safe(cd.discarded_mean_pr),
                    "omissions": cd.omissions,
                }
            except ValueError:
                payload["chosen_vs_discarded"] = None
        else:
            payload["chosen_vs_discarded"] = None
        return payload

    def recover(self, log_path) -> LiveSession:
        """Rebuild a session from its log after a restart.

        Replay verifies recorded queries and beliefs bit-exactly; the
        recovered session continues from the last persisted choice.
        """
        events = read_log(log_path)
        record = SessionRecord.from_events(events)
        state = replay(events)
        if state.phase == "initialized":
            state = present_next_query(state)
        session_id = record.header.get("session_id", uuid.uuid4().hex[:12])
        session = LiveSession(
            id=session_id,
            mode=record.header.get("mode", "live"),
            state=state,
            log=_DurableLog(log_path),
            created_at=events[0]["t"],
            events=events,
        )
        if state.phase == "awaiting_choice":
            # conservative restart of the walking clock for the open query
            session.presented_at = self.clock()
        for i, snap in enumerate(record.snapshots):
            mean = posterior_summary(Belief.from_dict(snap)).mean
            session.weight_trajectory.append(
                {"iteration": i + 1, "mean": mean.tolist()}
            )
        self.sessions[session_id] = session
        return session


def _sse_format(index: int, record: dict) -> str:
    return f"id: {index}\nevent: {record['event']}\ndata: {json.dumps(record)}\n\n"


def create_app(service_config: ServiceConfig | None = None,
               clock: Callable[[], datetime] | None = None,
               sse_keepalive_s: float = 15.0) -> FastAPI:
    cfg = service_config or ServiceConfig.load()
    app = FastAPI(title="prefgait session service")
    manager = SessionManager(cfg.data_dir, clock=clock)
    app.state.manager = manager

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"detail": exc.detail})

    @app.get("/health")
    async def health():
        return {"status": "ok", "sessions": len(manager.sessions), "t": utc_now()}

    @app.post("/sessions", status_code=201)
    async def create_session(body: dict):
        session = await manager.create(
            body.get("config") or {},
            body.get("mode", "live"),
            body.get("oracle"),
        )
        return _status_payload(session)

    @app.get("/sessions/{session_id}")
    async def session_status(session_id: str):
        return _status_payload(manager.get(session_id))

    @app.get("/sessions/{session_id}/query")
    async def current_query(session_id: str):
        session = manager.get(session_id)
        if session.phase != "awaiting_choice":
            raise ApiError(409, {
                "error": "no open query",
                "phase": session.phase,
            })
        return _query_payload(session)

    @app.post("/sessions/{session_id}/choice")
    async def post_choice(session_id: str, body: dict):
        session = manager.get(session_id)
        async with session.lock:
            return await manager.post_choice(session, body)

    @app.get("/sessions/{session_id}/events")
    async def stream_events(session_id: str, offset: int = 0, follow: int = 1):
        session = manager.get(session_id)

        async def generate():
            idx = max(0, offset)
            while True:
                while idx < len(session.events):
                    yield _sse_format(idx, session.events[idx])
                    idx += 1
                if not follow:
                    return
                timed_out = False
                async with session.cond:
                    if idx >= len(session.events):
                        try:
                            await asyncio.wait_for(
                                session.cond.wait(), timeout=sse_keepalive_s
                            )
                        except asyncio.TimeoutError:
                            timed_out = True
                if timed_out:
                    yield ": keep-alive\n\n"

        return StreamingResponse(generate(), media_type="text/event-stream")

    @app.post("/sessions/{session_id}/traces/{profile_idx}")
    async def ingest_trace(session_id: str, profile_idx: int, request: Request):
        session = manager.get(session_id)
        body = await request.body()
        async with session.lock:
            return await manager.ingest_trace(
                session, profile_idx, body.decode("utf-8")
            )

    @app.get("/sessions/{session_id}/report")
    async def report(session_id: str):
        return manager.report(manager.get(session_id))

    return app


def run(config_path=None):  # pragma: no cover - thin uvicorn wrapper
    import uvicorn

    cfg = ServiceConfig.load(config_path)
    uvicorn.run(create_app(cfg), host="127.0.0.1", port=cfg.port)
