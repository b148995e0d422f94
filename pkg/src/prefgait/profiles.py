"""Parameterized hip assistance torque profiles.

A profile is six features: an extension bump (peak torque, peak time, rise
time) and a flexion bump (same three), with times expressed in percent of
the gait cycle. The continuous torque curve is built from two smooth
symmetric bumps (zero-width plateau, cubic smoothstep edges, fall time equal
to rise time) that wrap around the cycle boundary, so an extension bump
peaking early in the cycle starts before heel strike. Sign convention:
flexion torque positive, extension torque negative.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

FEATURE_NAMES = ("f1", "f2", "f3", "f4", "f5", "f6")

#: Actuator limit of the target hardware; perturbed peak torques are clamped here.
MAX_PEAK_TORQUE_NM = 32.0

#: Single-feature perturbation magnitudes used by the validation protocol.
PEAK_TORQUE_DELTA_NM = 2.0
TIME_DELTA_PCT_GC = 7.0

#: Default curve resolution: samples per gait cycle.
DEFAULT_RESOLUTION = 1000

#: Perturbation targets, in feature order f1, f2, f3, f4, f5, f6.
PERTURBATION_TARGETS = (
    "peak_torque_ext",
    "peak_time_ext",
    "rise_time_ext",
    "peak_torque_flex",
    "peak_time_flex",
    "rise_time_flex",
)

_TARGET_TO_FEATURE = {
    "peak_torque_ext": 0,
    "peak_time_ext": 1,
    "rise_time_ext": 2,
    "peak_torque_flex": 3,
    "peak_time_flex": 4,
    "rise_time_flex": 5,
}


class FeatureValidationError(ValueError):
    """Raised when profile features violate their admissible ranges.

    Carries the list of offending field names in ``fields``.
    """

    def __init__(self, message: str, fields: Sequence[str]):
        super().__init__(message)
        self.fields = list(fields)


@dataclass(frozen=True)
class FeatureRanges:
    """Admissible [lower, upper] interval per feature plus sampling step.

    Defaults are the nominal intervals: peak torques 5.0-8.0 Nm, extension
    peak time 10.0-20.0 %GC, flexion peak time 55.0-65.0 %GC, rise times
    10.0-20.0 %GC, step 0.1.
    """

    ext_peak_torque: tuple[float, float] = (5.0, 8.0)
    ext_peak_time: tuple[float, float] = (10.0, 20.0)
    ext_rise_time: tuple[float, float] = (10.0, 20.0)
    flex_peak_torque: tuple[float, float] = (5.0, 8.0)
    flex_peak_time: tuple[float, float] = (55.0, 65.0)
    flex_rise_time: tuple[float, float] = (10.0, 20.0)
    step: float = 0.1

    def __post_init__(self):
        bad = [name for name, (lo, hi) in zip(FEATURE_NAMES, self.bounds()) if not lo < hi]
        if bad:
            raise FeatureValidationError(
                f"lower bound must be < upper bound for {bad}", bad
            )
        if self.step <= 0:
            raise FeatureValidationError("step must be positive", ["step"])

    def bounds(self) -> tuple[tuple[float, float], ...]:
        """Bounds in feature order f1..f6."""
        return (
            self.ext_peak_torque,
            self.ext_peak_time,
            self.ext_rise_time,
            self.flex_peak_torque,
            self.flex_peak_time,
            self.flex_rise_time,
        )

    def lowers(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds()])

    def uppers(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds()])

    def grid_sizes(self) -> list[int]:
        """Number of admissible discretized values per feature."""
        return [
            int(round((hi - lo) / self.step)) + 1 for lo, hi in self.bounds()
        ]

    def n_distinct_vectors(self) -> int:
        n = 1
        for k in self.grid_sizes():
            n *= k
        return n

    def to_dict(self) -> dict:
        d = {name: list(b) for name, b in zip(FEATURE_NAMES, self.bounds())}
        d["step"] = self.step
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureRanges":
        kwargs = {}
        for field, name in zip(
            ("ext_peak_torque", "ext_peak_time", "ext_rise_time",
             "flex_peak_torque", "flex_peak_time", "flex_rise_time"),
            FEATURE_NAMES,
        ):
            if name in d:
                kwargs[field] = tuple(d[name])
        if "step" in d:
            kwargs["step"] = d["step"]
        return cls(**kwargs)


@dataclass(frozen=True)
class TorqueProfileFeatures:
    """One torque profile: f1..f6 per the feature table.

    f1 extension peak torque [Nm], f2 extension peak time [%GC],
    f3 extension rise time [%GC], f4 flexion peak torque [Nm],
    f5 flexion peak time [%GC], f6 flexion rise time [%GC].

    ``perturbed`` marks profiles produced by :func:`perturb`; they may leave
    the nominal ranges but never exceed the actuator limit.
    """

    f1: float
    f2: float
    f3: float
    f4: float
    f5: float
    f6: float
    perturbed: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.f1, self.f2, self.f3, self.f4, self.f5, self.f6])

    def as_tuple(self) -> tuple[float, ...]:
        return (self.f1, self.f2, self.f3, self.f4, self.f5, self.f6)

    def validate(self, ranges: FeatureRanges) -> None:
        """Raise :class:`FeatureValidationError` listing out-of-range fields.

        Perturbed profiles are only checked against the actuator limit and
        for positive rise times.
        """
        bad = []
        values = self.as_tuple()
        if self.perturbed:
            for idx in (0, 3):  # peak torques
                if not 0.0 <= values[idx] <= MAX_PEAK_TORQUE_NM:
                    bad.append(FEATURE_NAMES[idx])
            for idx in (2, 5):  # rise times
                if values[idx] <= 0.0:
                    bad.append(FEATURE_NAMES[idx])
        else:
            for name, v, (lo, hi) in zip(FEATURE_NAMES, values, ranges.bounds()):
                if not lo <= v <= hi:
                    bad.append(name)
        if bad:
            raise FeatureValidationError(
                f"features out of range: {bad} in {self}", bad
            )

    def to_dict(self) -> dict:
        d = dict(zip(FEATURE_NAMES, self.as_tuple()))
        d["perturbed"] = self.perturbed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "TorqueProfileFeatures":
        return cls(*(float(d[name]) for name in FEATURE_NAMES),
                   perturbed=bool(d.get("perturbed", False)))


#: Fixed profile used during the familiarization walk, identical for everyone.
FAMILIARIZATION_PROFILE = TorqueProfileFeatures(7.0, 10.0, 15.0, 7.0, 60.0, 15.0)


@dataclass(frozen=True)
class TorqueCurve:
    """Sampled torque over one gait cycle at phases k/resolution, k=0..resolution-1."""

    phase: np.ndarray
    torque_nm: np.ndarray

    @property
    def resolution(self) -> int:
        return len(self.phase)

    def value_at(self, phase: float) -> float:
        """Linear interpolation with wrap-around at the cycle boundary."""
        p = float(phase) % 1.0
        x = np.concatenate([self.phase, [1.0]])
        y = np.concatenate([self.torque_nm, [self.torque_nm[0]]])
        return float(np.interp(p, x, y))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("phase,torque_nm\n")
            for p, t in zip(self.phase, self.torque_nm):
                f.write(f"{float(p)!r},{float(t)!r}\n")


def _smoothstep(u: np.ndarray) -> np.ndarray:
    return u * u * (3.0 - 2.0 * u)


def _bump(phase, peak_time_pct, rise_time_pct):
    """Unit-amplitude symmetric bump centered at peak_time, zero outside
    +/- rise_time, cubic smoothstep edges; all phases modulo one cycle."""
    center = peak_time_pct / 100.0
    half_width = rise_time_pct / 100.0
    # signed circular distance from the peak, in [-0.5, 0.5)
    delta = np.mod(np.asarray(phase, dtype=float) - center + 0.5, 1.0) - 0.5
    u = np.clip(1.0 - np.abs(delta) / half_width, 0.0, 1.0)
    return _smoothstep(u)


def torque_at(features: TorqueProfileFeatures, phase) -> np.ndarray | float:
    """Continuous torque [Nm] at the given phase(s) in [0, 1).

    Flexion bump adds positive torque, extension subtracts; overlapping
    supports sum.
    """
    ext = features.f1 * _bump(phase, features.f2, features.f3)
    flex = features.f4 * _bump(phase, features.f5, features.f6)
    out = flex - ext
    return float(out) if np.isscalar(phase) else out


def interpolate(
    features: TorqueProfileFeatures,
    resolution: int = DEFAULT_RESOLUTION,
    ranges: FeatureRanges | None = None,
) -> TorqueCurve:
    """Sample the profile's torque curve over one gait cycle.

    Args:
        features: profile to interpolate; validated against ``ranges``.
        resolution: samples per cycle, at least 100.
        ranges: admissible intervals for validation (defaults to nominal).

    Raises:
        FeatureValidationError: invalid features, listing offending fields.
        ValueError: resolution below 100.
    """
    if resolution < 100:
        raise ValueError(f"resolution must be >= 100, got {resolution}")
    features.validate(ranges if ranges is not None else FeatureRanges())
    phase = np.arange(resolution) / resolution
    return TorqueCurve(phase=phase, torque_nm=torque_at(features, phase))


def sample_batch(
    ranges: FeatureRanges, count: int, rng_seed: int
) -> list[TorqueProfileFeatures]:
    """Draw ``count`` pairwise-distinct profiles uniformly from the
    discretized feature grid (step ``ranges.step``, one decimal by default).

    Deterministic for a fixed seed. Duplicates are rejected and resampled.

    Raises:
        ValueError: count < 2 or count exceeds the number of distinct
            discretized vectors.
    """
    if count < 2:
        raise ValueError(f"count must be >= 2, got {count}")
    n_distinct = ranges.n_distinct_vectors()
    if count > n_distinct:
        raise ValueError(
            f"count {count} exceeds the {n_distinct} distinct discretized vectors"
        )
    rng = np.random.default_rng(rng_seed)
    lowers = ranges.lowers()
    sizes = ranges.grid_sizes()
    decimals = max(0, int(np.ceil(-np.log10(ranges.step))))
    seen: set[tuple[float, ...]] = set()
    batch: list[TorqueProfileFeatures] = []
    while len(batch) < count:
        ks = [rng.integers(0, n) for n in sizes]
        values = tuple(
            round(lo + k * ranges.step, decimals) for lo, k in zip(lowers, ks)
        )
        if values in seen:
            continue
        seen.add(values)
        batch.append(TorqueProfileFeatures(*values))
    return batch


def perturb(
    features: TorqueProfileFeatures, target: str, sign: int
) -> TorqueProfileFeatures:
    """Copy the profile with exactly one feature shifted.

    Peak torques move by sign*2.0 Nm (clamped to [0, actuator limit]); peak
    and rise times move by sign*7.0 %GC. Rise times are clamped below at one
    interpolation-step width (100/DEFAULT_RESOLUTION %GC) so the curve stays
    continuous. The result is flagged perturbed.
    """
    if target not in _TARGET_TO_FEATURE:
        raise ValueError(f"unknown perturbation target {target!r}")
    if sign not in (-1, 1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    idx = _TARGET_TO_FEATURE[target]
    values = list(features.as_tuple())
    if target in ("peak_torque_ext", "peak_torque_flex"):
        values[idx] = min(
            max(values[idx] + sign * PEAK_TORQUE_DELTA_NM, 0.0), MAX_PEAK_TORQUE_NM
        )
    else:
        values[idx] = values[idx] + sign * TIME_DELTA_PCT_GC
        if target in ("rise_time_ext", "rise_time_flex"):
            values[idx] = max(values[idx], 100.0 / DEFAULT_RESOLUTION)
    return TorqueProfileFeatures(*values, perturbed=True)


def normalize_features(
    features: TorqueProfileFeatures, ranges: FeatureRanges
) -> np.ndarray:
    """Min-max normalize f1..f6 to [0,1] per feature.

    Perturbed profiles may map outside [0,1]; values are passed through
    un-clamped.
    """
    lo = ranges.lowers()
    return (features.as_array() - lo) / (ranges.uppers() - lo)


def normalize_batch(
    batch: Iterable[TorqueProfileFeatures], ranges: FeatureRanges
) -> np.ndarray:
    """Stack normalized feature vectors into an (n_profiles, 6) array."""
    return np.array([normalize_features(p, ranges) for p in batch])


def profiles_to_json(batch: Iterable[TorqueProfileFeatures]) -> list[dict]:
    return [p.to_dict() for p in batch]


def profiles_from_json(items: Iterable[dict]) -> list[TorqueProfileFeatures]:
    return [TorqueProfileFeatures.from_dict(d) for d in items]


def replace_feature(
    features: TorqueProfileFeatures, **changes
) -> TorqueProfileFeatures:
    return replace(features, **changes)
