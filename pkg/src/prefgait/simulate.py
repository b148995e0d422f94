"""Closed-loop simulated sessions and multi-seed campaigns.

Drives the querying loop against a simulated responder, emitting the same
event-log records a live service session would, so logs from either path
replay interchangeably. Also provides a deterministic synthetic walking
trace generator for exercising the metrics pipeline without hardware.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import (
    SessionConfig,
    SessionState,
    ValidationOutcome,
    initialize,
    present_next_query,
    run_validation,
    submit_choice,
)
from .gait import GaitTrace
from .oracle import SimulatedUser
from .preference import Query, posterior_summary, random_unit_vectors
from .profiles import (
    TorqueProfileFeatures,
    profiles_to_json,
    torque_at,
)
from .sessionlog import SessionLogWriter, make_event


def finished_payload(state: SessionState) -> dict:
    summary = posterior_summary(state.belief, state.batch, state.config.ranges)
    return {
        "final_index": state.final_index,
        "final_features": state.final_profile().to_dict(),
        "posterior_mean": summary.mean.tolist(),
        "posterior_std": summary.std.tolist(),
        "degenerate": summary.degenerate,
    }


def validation_payload(outcome: ValidationOutcome) -> dict:
    item = outcome.item
    return {
        "target": item.target,
        "sign": item.sign,
        "preferred_slot": item.preferred_slot,
        "perturbed_features": item.perturbed.to_dict(),
        "chosen": outcome.chosen,
        "kept": outcome.kept,
    }


@dataclass
class SimulatedSessionResult:
    state: SessionState
    events: list
    validation: list  # ValidationOutcome


def run_simulated_session(
    config: SessionConfig,
    user: SimulatedUser,
    log_path=None,
    batch: Sequence[TorqueProfileFeatures] | None = None,
    with_validation: bool = True,
) -> SimulatedSessionResult:
    """Run one full session against a simulated responder.

    Emits the standard event sequence (header, batch_created, then
    query_presented/choice/belief_snapshot triples, finished, and
    validation_result per perturbation) to ``log_path`` when given, and
    returns the events either way. ``batch`` overrides the sampled batch for
    controlled experiments.
    """
    state = initialize(config)
    if batch is not None:
        batch = tuple(batch)
        state = replace(state, batch=batch,
                        current_query=Query(batch[0], batch[1]),
                        query_indices=(0, 1))
    events = [
        make_event("header", {
            "config": config.to_dict(),
            "mode": "simulated",
            "oracle": user.to_dict(),
            "seeds": config.derived_seeds(),
            "schema": 1,
        }),
        make_event("batch_created", {"profiles": profiles_to_json(state.batch)}),
    ]
    state = present_next_query(state)
    while not state.finished:
        events.append(make_event("query_presented", {
            "iteration": state.iteration,
            "a_index": state.query_indices[0],
            "b_index": state.query_indices[1],
        }))
        answer = user.respond(state.current_query, config.ranges)
        events.append(make_event("choice", {
            "iteration": state.iteration,
            "chosen": answer,
            "responder": "oracle",
        }))
        state = submit_choice(state, answer, responder="oracle")
        events.append(make_event("belief_snapshot", state.belief.to_dict()))
    events.append(make_event("finished", finished_payload(state)))
    outcomes: list[ValidationOutcome] = []
    if with_validation and config.validation_targets:
        state, outcomes = run_validation(
            state, lambda q: user.respond(q, config.ranges)
        )
        for o in outcomes:
            events.append(make_event("validation_result", validation_payload(o)))
    if log_path is not None:
        writer = SessionLogWriter(log_path)
        try:
            for e in events:
                writer.append(e["event"], e["payload"], t=e["t"])
        finally:
            writer.close()
    return SimulatedSessionResult(state=state, events=events, validation=outcomes)


def resolve_oracle(spec: dict | None, seed: int) -> SimulatedUser:
    """Build the responder for one campaign seed.

    Missing w_star draws a fresh true direction per seed; the oracle rng
    seed likewise derives from the campaign seed unless pinned.
    """
    spec = dict(spec or {})
    if spec.get("w_star") is None:
        rng = np.random.default_rng([seed, 104729])
        spec["w_star"] = random_unit_vectors(rng, 1)[0].tolist()
    if spec.get("seed") is None:
        spec["seed"] = int(np.random.SeedSequence([seed, 7919]).generate_state(1)[0])
    return SimulatedUser.from_dict(spec)


def true_rank(
    user: SimulatedUser, state: SessionState, index: int
) -> int:
    """1-based rank of a batch profile under the oracle's true reward."""
    rewards = [user.true_reward(p, state.config.ranges) for p in state.batch]
    return 1 + sum(1 for r in rewards if r > rewards[index])


@dataclass
class CampaignRow:
    seed: int
    final_index: int
    rank: int
    cos_alignment: float
    features: TorqueProfileFeatures


@dataclass
class CampaignSummary:
    rows: list
    top1_rate: float
    top3_rate: float
    mean_cos: float

    def hit_rate(self, k: int) -> float:
        return sum(1 for r in self.rows if r.rank <= k) / len(self.rows)


def run_campaign(
    config: SessionConfig,
    oracle_spec: dict | None,
    seeds: Sequence[int],
    out_dir=None,
    with_validation: bool = False,
) -> CampaignSummary:
    """One simulated session per seed; optionally persist logs and CSV."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "logs").mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in seeds:
        cfg = replace(config, seed=int(seed))
        user = resolve_oracle(oracle_spec, int(seed))
        log_path = out / "logs" / f"session_{seed}.jsonl" if out else None
        result = run_simulated_session(
            cfg, user, log_path=log_path, with_validation=with_validation
        )
        summary = posterior_summary(result.state.belief)
        rows.append(CampaignRow(
            seed=int(seed),
            final_index=result.state.final_index,
            rank=true_rank(user, result.state, result.state.final_index),
            cos_alignment=float(np.dot(summary.mean, user.w_star)),
            features=result.state.final_profile(),
        ))
    summary = CampaignSummary(
        rows=rows,
        top1_rate=sum(1 for r in rows if r.rank == 1) / len(rows),
        top3_rate=sum(1 for r in rows if r.rank <= 3) / len(rows),
        mean_cos=float(np.mean([r.cos_alignment for r in rows])),
    )
    if out is not None:
        with open(out / "campaign.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["seed", "final_index", "true_rank", "cos_alignment",
                        "f1", "f2", "f3", "f4", "f5", "f6"])
            for r in rows:
                w.writerow([r.seed, r.final_index, r.rank, repr(r.cos_alignment),
                            *[repr(v) for v in r.features.as_tuple()]])
    return summary


def synthesize_trace(
    features: TorqueProfileFeatures,
    n_cycles: int = 12,
    stride_s: float = 1.0,
    sample_rate_hz: float = 100.0,
    hip_amplitude_deg: float = 25.0,
    knee_amplitude_deg: float = 30.0,
    stance_fraction: float = 0.6,
    include_omega: bool = True,
) -> GaitTrace:
    """Deterministic synthetic walking trace commanded by a torque profile.

    Joint angles are sinusoids locked to the gait phase (right side shifted
    half a cycle), contact a square wave with the given stance fraction, and
    the commanded torque sampled from the profile's curve at each side's
    phase. ``n_cycles`` counts complete heel-strike-to-heel-strike cycles
    recoverable from the contact signal.
    """
    total_cycles = n_cycles + 2  # margins so n_cycles survive segmentation
    stride_samples = int(round(stride_s * sample_rate_hz))
    n = total_cycles * stride_samples
    t = np.arange(n) / sample_rate_hz
    idx = np.arange(n)
    # integer sample arithmetic keeps contact edges and cadence jitter-free
    phase_l = (idx % stride_samples) / stride_samples
    phase_r = ((idx + stride_samples // 2) % stride_samples) / stride_samples
    stance_samples = int(round(stance_fraction * stride_samples))

    def side_arrays(phase):
        hip = hip_amplitude_deg * np.cos(2 * np.pi * phase)
        knee = knee_amplitude_deg * (1 - np.cos(2 * np.pi * (phase + 0.08))) / 2
        omega = (
            -hip_amplitude_deg * np.deg2rad(1.0)
            * 2 * np.pi / stride_s * np.sin(2 * np.pi * phase)
        )
        tau = torque_at(features, phase)
        contact = np.round(phase * stride_samples).astype(int) < stance_samples
        return hip, knee, omega, tau, contact

    hip_l, knee_l, omega_l, tau_l, contact_l = side_arrays(phase_l)
    hip_r, knee_r, omega_r, tau_r, contact_r = side_arrays(phase_r)
    return GaitTrace(
        time_s=t,
        hip_deg={"left": hip_l, "right": hip_r},
        knee_deg={"left": knee_l, "right": knee_r},
        contact={"left": contact_l, "right": contact_r},
        tau_nm={"left": tau_l, "right": tau_r},
        omega_rads={"left": omega_l, "right": omega_r} if include_omega else None,
        sample_rate_hz=sample_rate_hz,
    )
