"""Post-hoc evaluation metrics: mechanical power, power ratio, feature stats.

Power is the product of hip angular velocity and commanded torque per gait
cycle. The power ratio (PR) divides the mean magnitude of negative power by
the mean positive power; lower PR means less power dissipated against the
wearer. Degenerate cycles (no positive power, or no power at all) are
flagged rather than raised so batch analyses survive them.

Note on reference feature tables: published per-feature summaries sometimes
swap the flexion peak-time and rise-time rows (peak time belongs in
[55, 65] %GC, rise time in [10, 20]); feature_stats always reports under
range-consistent labels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .gait import GaitTrace, SIDES, segment_cycles, stance_swing_ratio
from .profiles import FEATURE_NAMES, TorqueProfileFeatures
from .sessionlog import SessionRecord

PR_OK = "ok"
PR_INFINITE = "infinite"
PR_UNDEFINED = "undefined"


@dataclass(frozen=True)
class PowerProfile:
    """Per-cycle power samples with signed-part means."""

    power_w: np.ndarray
    mean_positive_w: float
    mean_negative_w: float  # magnitude


def power_profile(tau_nm: np.ndarray, omega_rads: np.ndarray) -> PowerProfile:
    """P(t) = omega(t) * tau(t) over one cycle.

    mean_positive is the mean over samples with P > 0 (0 if none);
    mean_negative the mean of |P| over samples with P < 0 (0 if none).

    Raises:
        ValueError: sample length mismatch.
    """
    tau = np.asarray(tau_nm, dtype=float)
    omega = np.asarray(omega_rads, dtype=float)
    if tau.shape != omega.shape:
        raise ValueError(
            f"torque and velocity must align, got {tau.shape} vs {omega.shape}"
        )
    p = omega * tau
    pos = p[p > 0]
    neg = p[p < 0]
    return PowerProfile(
        power_w=p,
        mean_positive_w=float(pos.mean()) if len(pos) else 0.0,
        mean_negative_w=float(np.abs(neg).mean()) if len(neg) else 0.0,
    )


@dataclass(frozen=True)
class PowerRatio:
    value: float  # nan when undefined, inf when positive power is 0
    flag: str  # ok | infinite | undefined

    @property
    def finite(self) -> bool:
        return self.flag == PR_OK


def power_ratio(profile: PowerProfile) -> PowerRatio:
    """Unsigned mean-negative over mean-positive power."""
    pos, neg = profile.mean_positive_w, profile.mean_negative_w
    if pos == 0.0 and neg == 0.0:
        return PowerRatio(float("nan"), PR_UNDEFINED)
    if pos == 0.0:
        return PowerRatio(float("inf"), PR_INFINITE)
    return PowerRatio(neg / pos, PR_OK)


@dataclass(frozen=True)
class TraceMetrics:
    """Per-trace aggregate: mean PR over finite cycles plus stance/swing."""

    pr_mean: float  # nan when no finite cycle
    n_cycles: int
    n_degenerate: int
    stance_swing_mean: float
    stance_swing_std: float

    def to_dict(self) -> dict:
        """JSON-safe view; non-finite values map to None."""

        def safe(x):
            return x if math.isfinite(x) else None

        return {
            "pr_mean": safe(self.pr_mean),
            "n_cycles": self.n_cycles,
            "n_degenerate": self.n_degenerate,
            "stance_swing_mean": safe(self.stance_swing_mean),
            "stance_swing_std": safe(self.stance_swing_std),
        }


def trace_metrics(trace: GaitTrace) -> TraceMetrics:
    """Compute power and gait metrics for every side carrying a torque
    channel, averaging per-cycle PRs across sides.

    Raises:
        ValueError: the trace has no commanded-torque channel.
    """
    if trace.tau_nm is None:
        raise ValueError("trace has no commanded-torque channel")
    prs: list[float] = []
    degenerate = 0
    all_cycles = []
    for side in SIDES:
        if side not in trace.tau_nm:
            continue
        cycles = segment_cycles(trace, side)
        all_cycles.extend(cycles)
        tau = trace.tau_nm[side]
        omega = trace.hip_velocity_rads(side)
        for c in cycles:
            pr = power_ratio(power_profile(tau[c.start:c.end], omega[c.start:c.end]))
            if pr.finite:
                prs.append(pr.value)
            else:
                degenerate += 1
    if not all_cycles:
        raise ValueError("no complete gait cycles in trace")
    ss = stance_swing_ratio(all_cycles)
    return TraceMetrics(
        pr_mean=float(np.mean(prs)) if prs else float("nan"),
        n_cycles=len(all_cycles),
        n_degenerate=degenerate,
        stance_swing_mean=ss.mean,
        stance_swing_std=ss.std,
    )


@dataclass(frozen=True)
class ChosenDiscardedReport:
    """Mean PR of ever-chosen vs never-chosen presented profiles.

    A profile that was both selected and rejected across different queries
    counts as chosen. Profiles without a usable trace are listed in
    ``omissions`` and excluded from the means.
    """

    chosen_mean_pr: float
    discarded_mean_pr: float
    per_profile: dict  # index -> {"chosen": bool, "pr_mean": float, ...}
    omissions: list


def chosen_vs_discarded_pr(
    record: SessionRecord,
    traces: Mapping[int, GaitTrace] | Mapping[int, TraceMetrics],
) -> ChosenDiscardedReport:
    """Partition tested profiles by whether they were ever chosen and
    average per-profile mean PR within each partition.

    ``traces`` maps batch index to a GaitTrace (metrics computed here) or to
    precomputed TraceMetrics.

    Raises:
        ValueError: the log records no presented queries.
    """
    presented = sorted(record.presented_indices())
    if not presented:
        raise ValueError("session log records no presented queries")
    chosen = record.chosen_indices()
    per_profile: dict[int, dict] = {}
    omissions: list[dict] = []
    for idx in presented:
        entry = {"chosen": idx in chosen}
        source = traces.get(idx)
        if source is None:
            omissions.append({"profile_index": idx, "reason": "missing trace"})
            entry["pr_mean"] = None
        else:
            tm = source if isinstance(source, TraceMetrics) else trace_metrics(source)
            entry.update(tm.to_dict())
            if math.isnan(tm.pr_mean):
                omissions.append(
                    {"profile_index": idx, "reason": "no finite-PR cycle"}
                )
                entry["pr_mean"] = None
        per_profile[idx] = entry

    def partition_mean(want_chosen: bool) -> float:
        values = [
            e["pr_mean"] for e in per_profile.values()
            if e["chosen"] is want_chosen and e["pr_mean"] is not None
        ]
        return float(np.mean(values)) if values else float("nan")

    return ChosenDiscardedReport(
        chosen_mean_pr=partition_mean(True),
        discarded_mean_pr=partition_mean(False),
        per_profile=per_profile,
        omissions=omissions,
    )


@dataclass(frozen=True)
class FeatureStats:
    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray  # sample (n-1) std

    def rounded_rows(self, decimals: int = 1) -> list[tuple[str, float, float]]:
        """Presentation rows, one decimal by convention."""
        return [
            (n, round(float(m), decimals), round(float(s), decimals))
            for n, m, s in zip(self.names, self.mean, self.std)
        ]


def feature_stats(profiles: Sequence[TorqueProfileFeatures]) -> FeatureStats:
    """Per-feature mean and sample std of final profiles across subjects."""
    if len(profiles) < 2:
        raise ValueError("need at least 2 profiles for distribution stats")
    values = np.array([p.as_array() for p in profiles])
    return FeatureStats(
        names=FEATURE_NAMES,
        mean=values.mean(axis=0),
        std=values.std(axis=0, ddof=1),
    )
