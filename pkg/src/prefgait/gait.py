"""Gait trace ingestion, event detection, phase estimation, segmentation.

Traces carry uniformly sampled joint angles plus optional foot-contact
booleans, commanded torques, and hip angular velocities. Heel strike and toe
off come from contact transitions (debounced) or from externally supplied
event lists; IMU-based detection is out of scope here.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_SAMPLE_RATE_HZ = 100.0

#: Contact transitions shorter than this are treated as sensor noise.
DEBOUNCE_S = 0.05

#: Stride durations averaged by the online phase estimator.
PHASE_ESTIMATOR_STRIDES = 3

SIDES = ("left", "right")

_BASE_COLUMNS = [
    "time_s", "hip_l_deg", "hip_r_deg", "knee_l_deg", "knee_r_deg",
]
_CONTACT_COLUMNS = ["contact_l", "contact_r"]
_TORQUE_COLUMNS = ["tau_l_nm", "tau_r_nm"]
_OMEGA_COLUMNS = ["omega_l_rads", "omega_r_rads"]


class UnsupportedInputError(ValueError):
    """Input lacks the channels an operation needs (e.g. no contact signal)."""


class TraceSchemaError(ValueError):
    """Malformed trace CSV; message pinpoints row and column."""


@dataclass(frozen=True)
class GaitTrace:
    """Uniformly sampled lower-limb time series.

    Angles in degrees, torques in Nm, angular velocities in rad/s. Optional
    channels are None when absent. Hip angular velocity falls back to finite
    differences of the hip angle when the channel is missing.
    """

    time_s: np.ndarray
    hip_deg: dict  # side -> array
    knee_deg: dict
    contact: dict | None = None  # side -> bool array
    tau_nm: dict | None = None
    omega_rads: dict | None = None
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ

    def __post_init__(self):
        t = np.asarray(self.time_s, dtype=float)
        if len(t) < 2:
            raise ValueError("trace needs at least 2 samples")
        dt = np.diff(t)
        if np.any(dt <= 0):
            raise ValueError("time_s must be strictly increasing")
        nominal = 1.0 / self.sample_rate_hz
        if np.any(np.abs(dt - nominal) > 0.01 * nominal):
            raise ValueError(
                "sampling interval deviates more than 1% from "
                f"1/{self.sample_rate_hz} Hz"
            )

    def __len__(self) -> int:
        return len(self.time_s)

    def hip_velocity_rads(self, side: str) -> np.ndarray:
        """Measured hip angular velocity, or finite differences of the hip
        angle (deg -> rad) when the channel is absent."""
        if self.omega_rads is not None and side in self.omega_rads:
            return self.omega_rads[side]
        angle_rad = np.deg2rad(self.hip_deg[side])
        return np.gradient(angle_rad, self.time_s)


def load_trace_csv(path_or_lines, sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ) -> GaitTrace:
    """Parse the trace CSV schema.

    Header: time_s,hip_l_deg,hip_r_deg,knee_l_deg,knee_r_deg
    [,contact_l,contact_r][,tau_l_nm,tau_r_nm][,omega_l_rads,omega_r_rads];
    contact encoded 0/1. Optional channel pairs must appear together.

    Raises:
        TraceSchemaError: missing columns, unpaired optional columns, or an
            unparsable cell (message carries row and column).
    """
    if isinstance(path_or_lines, (str, bytes)) or hasattr(path_or_lines, "__fspath__"):
        with open(path_or_lines, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    else:
        rows = list(csv.reader(path_or_lines))
    if not rows:
        raise TraceSchemaError("empty trace CSV")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in _BASE_COLUMNS if c not in header]
    if missing:
        raise TraceSchemaError(f"missing required columns: {missing}")
    for pair in (_CONTACT_COLUMNS, _TORQUE_COLUMNS, _OMEGA_COLUMNS):
        present = [c for c in pair if c in header]
        if present and len(present) != len(pair):
            raise TraceSchemaError(
                f"optional columns must appear as a pair, got only {present}"
            )
    col = {name: header.index(name) for name in header}

    def parse(r: int, name: str, text: str) -> float:
        try:
            return float(text)
        except ValueError:
            raise TraceSchemaError(
                f"row {r+1}, column {name!r}: cannot parse {text!r}"
            ) from None

    data = {name: [] for name in header}
    for r, row in enumerate(rows[1:], start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise TraceSchemaError(
                f"row {r+1}: expected {len(header)} cells, got {len(row)}"
            )
        for name in header:
            data[name].append(parse(r, name, row[col[name]]))

    def arr(name):
        return np.array(data[name])

    contact = None
    if "contact_l" in header:
        contact = {"left": arr("contact_l") > 0.5, "right": arr("contact_r") > 0.5}
    tau = None
    if "tau_l_nm" in header:
        tau = {"left": arr("tau_l_nm"), "right": arr("tau_r_nm")}
    omega = None
    if "omega_l_rads" in header:
        omega = {"left": arr("omega_l_rads"), "right": arr("omega_r_rads")}
    return GaitTrace(
        time_s=arr("time_s"),
        hip_deg={"left": arr("hip_l_deg"), "right": arr("hip_r_deg")},
        knee_deg={"left": arr("knee_l_deg"), "right": arr("knee_r_deg")},
        contact=contact,
        tau_nm=tau,
        omega_rads=omega,
        sample_rate_hz=sample_rate_hz,
    )


def write_trace_csv(trace: GaitTrace, path) -> None:
    header = list(_BASE_COLUMNS)
    if trace.contact is not None:
        header += _CONTACT_COLUMNS
    if trace.tau_nm is not None:
        header += _TORQUE_COLUMNS
    if trace.omega_rads is not None:
        header += _OMEGA_COLUMNS
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for i in range(len(trace)):
            row = [trace.time_s[i],
                   trace.hip_deg["left"][i], trace.hip_deg["right"][i],
                   trace.knee_deg["left"][i], trace.knee_deg["right"][i]]
            if trace.contact is not None:
                row += [int(trace.contact["left"][i]), int(trace.contact["right"][i])]
            if trace.tau_nm is not None:
                row += [trace.tau_nm["left"][i], trace.tau_nm["right"][i]]
            if trace.omega_rads is not None:
                row += [trace.omega_rads["left"][i], trace.omega_rads["right"][i]]
            w.writerow([v if isinstance(v, int) else repr(float(v)) for v in row])


def _debounced_runs(contact: np.ndarray, min_samples: int):
    """Run-length encode the contact signal, merging runs shorter than the
    debounce window into their predecessor."""
    runs = []  # (value, start, length)
    start = 0
    for i in range(1, len(contact) + 1):
        if i == len(contact) or contact[i] != contact[start]:
            runs.append([bool(contact[start]), start, i - start])
            start = i
    merged = [runs[0]]
    for value, start, length in runs[1:]:
        if length < min_samples:
            merged[-1][2] += length
        elif value == merged[-1][0]:
            merged[-1][2] += length
        else:
            merged.append([value, start, length])
    return merged


def detect_events(
    trace: GaitTrace,
    side: str,
    external_events: Sequence[tuple[int, int]] | None = None,
) -> list[tuple[int, int]]:
    """Heel-strike / toe-off index pairs for one side.

    Heel strike is a false->true contact transition, toe off true->false;
    transitions shorter than the 50 ms debounce window are treated as noise.
    Only complete (HS, TO) pairs are returned, in time order. A trailing
    heel strike with no toe off before the trace ends is dropped.

    ``external_events`` bypasses detection for datasets that ship event
    indices instead of a contact channel.

    Raises:
        UnsupportedInputError: no contact channel for the side and no
            external events.
    """
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")
    if external_events is not None:
        events = [(int(hs), int(to)) for hs, to in external_events]
        for hs, to in events:
            if not 0 <= hs < to < len(trace):
                raise ValueError(f"bad external event pair ({hs}, {to})")
        if any(events[i + 1][0] < events[i][1] for i in range(len(events) - 1)):
            raise ValueError("external events overlap or are out of order")
        return events
    if trace.contact is None or side not in trace.contact:
        raise UnsupportedInputError(
            f"trace has no contact channel for side {side!r} and no external "
            "events were supplied"
        )
    contact = trace.contact[side]
    if not contact.any():
        return []
    min_samples = int(np.ceil(DEBOUNCE_S * trace.sample_rate_hz))
    runs = _debounced_runs(contact, min_samples)
    pairs = []
    pending_hs = None
    for k, (value, start, _length) in enumerate(runs):
        if k == 0:
            continue  # the leading run has no transition into it
        if value:  # false -> true
            pending_hs = start
        elif pending_hs is not None:  # true -> false
            pairs.append((pending_hs, start))
            pending_hs = None
    return pairs


@dataclass
class PhaseEstimator:
    """Online gait-phase estimator fed by heel-strike times.

    Phase is elapsed time since the last heel strike divided by the mean of
    the last 3 stride durations, clamped to [0, 1). The clamp means a missed
    heel strike saturates near 1 instead of wrapping, so a stale estimate can
    never re-trigger early-cycle assistance. Not ready (returns None) until
    two heel strikes have been seen; callers should command zero torque
    until then.

    One instance belongs to one session; serialize updates per session.
    """

    n_strides: int = PHASE_ESTIMATOR_STRIDES
    _heel_strikes: list = field(default_factory=list)

    def record_heel_strike(self, t: float) -> None:
        if self._heel_strikes and t <= self._heel_strikes[-1]:
            raise ValueError("heel-strike times must be strictly increasing")
        self._heel_strikes.append(float(t))

    @property
    def ready(self) -> bool:
        return len(self._heel_strikes) >= 2

    def stride_estimate(self) -> float | None:
        if not self.ready:
            return None
        hs = self._heel_strikes
        durations = np.diff(hs[-(self.n_strides + 1):])
        return float(np.mean(durations))

    def phase(self, t: float) -> float | None:
        """Phase in [0, 1) at time t, or None while not ready."""
        if not self.ready:
            return None
        elapsed = t - self._heel_strikes[-1]
        raw = elapsed / self.stride_estimate()
        return float(np.clip(raw, 0.0, np.nextafter(1.0, 0.0)))


@dataclass(frozen=True)
class GaitCycle:
    """One heel-strike-to-heel-strike stride on one side.

    Samples [start, end) belong to the cycle; stance + swing equals the
    cycle duration up to one sample period.
    """

    side: str
    start: int
    end: int
    toe_off: int
    stance_s: float
    swing_s: float
    phase: np.ndarray  # per-sample, monotone from 0, in [0, 1)

    @property
    def duration_s(self) -> float:
        return self.stance_s + self.swing_s


def segment_cycles(
    trace: GaitTrace,
    side: str,
    events: Sequence[tuple[int, int]] | None = None,
) -> list[GaitCycle]:
    """Split a trace into gait cycles between consecutive heel strikes.

    Cycle i covers sample indices [hs_i, hs_{i+1}); concatenating cycles
    reproduces every sample between the first and last heel strike exactly
    once.
    """
    pairs = detect_events(trace, side, external_events=events)
    cycles = []
    for (hs, to), (next_hs, _next_to) in zip(pairs, pairs[1:]):
        t0 = trace.time_s[hs]
        t1 = trace.time_s[next_hs]
        phase = (trace.time_s[hs:next_hs] - t0) / (t1 - t0)
        cycles.append(
            GaitCycle(
                side=side,
                start=hs,
                end=next_hs,
                toe_off=to,
                stance_s=float(trace.time_s[to] - t0),
                swing_s=float(t1 - trace.time_s[to]),
                phase=phase,
            )
        )
    return cycles


@dataclass(frozen=True)
class StanceSwingSummary:
    ratios: np.ndarray
    mean: float
    std: float
    excluded: int  # cycles dropped for zero swing duration


def stance_swing_ratio(cycles: Sequence[GaitCycle]) -> StanceSwingSummary:
    """Per-cycle stance/swing ratio with mean and sample std.

    Cycles with zero swing are excluded and counted. Sample std uses n-1
    and is reported as 0.0 when fewer than two ratios remain.
    """
    if not cycles:
        raise ValueError("need at least one cycle")
    ratios = []
    excluded = 0
    for c in cycles:
        if c.swing_s <= 0:
            excluded += 1
            continue
        ratios.append(c.stance_s / c.swing_s)
    ratios = np.array(ratios)
    if len(ratios) == 0:
        return StanceSwingSummary(ratios, float("nan"), float("nan"), excluded)
    std = float(np.std(ratios, ddof=1)) if len(ratios) > 1 else 0.0
    return StanceSwingSummary(ratios, float(np.mean(ratios)), std, excluded)


SYNERGY_POINTS = 100


def synergy_export(trace: GaitTrace, cycles: Sequence[GaitCycle]) -> np.ndarray:
    """Hip-vs-knee angle pairs resampled to 100 phase points per cycle.

    Returns an array of rows (cycle_index, phase, hip_deg, knee_deg) for
    phase-plot rendering; each cycle contributes exactly 100 rows.
    """
    grid = np.arange(SYNERGY_POINTS) / SYNERGY_POINTS
    rows = []
    for i, c in enumerate(cycles):
        hip = trace.hip_deg[c.side][c.start:c.end]
        knee = trace.knee_deg[c.side][c.start:c.end]
        hip_r = np.interp(grid, c.phase, hip)
        knee_r = np.interp(grid, c.phase, knee)
        for p, h, k in zip(grid, hip_r, knee_r):
            rows.append((i, p, h, k))
    return np.array(rows)
