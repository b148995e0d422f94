"""Active pairwise-querying session over a batch of torque profiles.

A session samples a batch of random profiles, seeds the loop with a dummy
query that never updates the belief, then alternates: pick the most
informative pair (or a random one), collect the answer, re-run the belief
update over the full history. After the configured number of comparisons the
preferred profile is the batch member with the highest mean reward under the
posterior, and a validation round pits it against single-feature perturbed
variants in randomized order.

State transitions: initialized -> (awaiting_choice -> updating)* ->
finished -> validating. All operations are functional (state in, state out);
the service layer serializes mutations per session.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, xlogy

from . import preference
from .preference import Belief, Choice, Query, StateError, mh_update, posterior_summary, prior_belief
from .profiles import (
    FeatureRanges,
    PERTURBATION_TARGETS,
    TorqueProfileFeatures,
    normalize_batch,
    perturb,
    sample_batch,
)

PHASES = ("initialized", "awaiting_choice", "updating", "finished", "validating")

STRATEGIES = ("mutual_information", "random")

DEFAULT_BATCH_SIZE = 40
DEFAULT_COMPARISONS = 12
DEFAULT_EXPOSURE_S = 20.0
DEFAULT_WASHOUT_S = 5.0


class ConfigError(ValueError):
    """Invalid session configuration."""


@dataclass(frozen=True)
class SessionConfig:
    """Protocol and model parameters for one preference session."""

    batch_size: int = DEFAULT_BATCH_SIZE
    comparisons: int = DEFAULT_COMPARISONS
    exposure_s: float = DEFAULT_EXPOSURE_S
    washout_s: float = DEFAULT_WASHOUT_S
    seed: int = 0
    strategy: str = "mutual_information"
    validation_targets: tuple[str, ...] = PERTURBATION_TARGETS
    ranges: FeatureRanges = field(default_factory=FeatureRanges)
    resolution: int = 1000
    n_belief_samples: int = preference.DEFAULT_N_SAMPLES
    proposal_std: float = preference.DEFAULT_PROPOSAL_STD
    burn_in: int = preference.DEFAULT_BURN_IN
    thin: int = preference.DEFAULT_THIN
    model_beta: float = 1.0

    def __post_init__(self):
        if self.comparisons < 1:
            raise ConfigError(f"comparisons must be >= 1, got {self.comparisons}")
        if self.exposure_s <= 0 or self.washout_s <= 0:
            raise ConfigError("exposure_s and washout_s must be positive")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"strategy must be one of {STRATEGIES}, got {self.strategy!r}"
            )
        unknown = [t for t in self.validation_targets if t not in PERTURBATION_TARGETS]
        if unknown:
            raise ConfigError(f"unknown validation targets {unknown}")

    def derived_seeds(self) -> dict:
        """Per-purpose integer seeds derived from the session seed."""
        state = np.random.SeedSequence(self.seed).generate_state(4)
        return {
            "batch": int(state[0]),
            "belief": int(state[1]),
            "query": int(state[2]),
            "validation": int(state[3]),
        }

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "comparisons": self.comparisons,
            "exposure_s": self.exposure_s,
            "washout_s": self.washout_s,
            "seed": self.seed,
            "strategy": self.strategy,
            "validation_targets": list(self.validation_targets),
            "ranges": self.ranges.to_dict(),
            "resolution": self.resolution,
            "n_belief_samples": self.n_belief_samples,
            "proposal_std": self.proposal_std,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "model_beta": self.model_beta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionConfig":
        d = dict(d)
        if "ranges" in d:
            d["ranges"] = FeatureRanges.from_dict(d["ranges"])
        if "validation_targets" in d:
            d["validation_targets"] = tuple(d["validation_targets"])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class SessionState:
    """Immutable snapshot of one session's progress."""

    config: SessionConfig
    batch: tuple[TorqueProfileFeatures, ...]
    belief: Belief
    history: tuple[Choice, ...] = ()
    phase: str = "initialized"
    current_query: Query | None = None
    query_indices: tuple[int, int] | None = None
    final_index: int | None = None

    @property
    def iteration(self) -> int:
        """Completed comparisons."""
        return len(self.history)

    @property
    def finished(self) -> bool:
        return self.phase in ("finished", "validating")

    def final_profile(self) -> TorqueProfileFeatures:
        if self.final_index is None:
            raise StateError("session has no final profile yet")
        return self.batch[self.final_index]


def initialize(config: SessionConfig) -> SessionState:
    """Sample the batch, build the prior belief, seed the dummy query.

    The dummy query (first two batch members) only seeds the loop; it never
    updates the belief.
    """
    seeds = config.derived_seeds()
    batch = tuple(
        sample_batch(config.ranges, config.batch_size, seeds["batch"])
    )
    belief = prior_belief(seeds["belief"], n_samples=config.n_belief_samples)
    return SessionState(
        config=config,
        batch=batch,
        belief=belief,
        current_query=Query(batch[0], batch[1]),
        query_indices=(0, 1),
        phase="initialized",
    )


def _binary_entropy(p: np.ndarray) -> np.ndarray:
    return -(xlogy(p, p) + xlogy(1.0 - p, 1.0 - p))


def mutual_information_scores(
    belief: Belief, batch: Sequence[TorqueProfileFeatures], ranges: FeatureRanges,
    beta: float = 1.0,
):
    """MI between the response and the weights for every unordered pair.

    For pair (i, j): MI = H(mean_w P_w) - mean_w H(P_w), with P_w the
    probability sample w assigns to choosing i, and H binary entropy in
    nats. Scores lie in [0, ln 2].

    Returns (pair index arrays i, j, scores).
    """
    phi = normalize_batch(batch, ranges)
    rewards = belief.samples @ phi.T  # (n_samples, n_profiles)
    idx_i, idx_j = np.triu_indices(len(batch), k=1)
    p = expit(beta * (rewards[:, idx_i] - rewards[:, idx_j]))  # (n_samples, n_pairs)
    mi = _binary_entropy(p.mean(axis=0)) - _binary_entropy(p).mean(axis=0)
    return idx_i, idx_j, mi


def optimize_query(state: SessionState) -> tuple[Query, tuple[int, int]]:
    """Pick the next pair to present.

    mutual_information: the max-MI pair, ties broken by lexicographic pair
    index. random: a uniform pair. Either way the immediately preceding
    query's pair is excluded, unless it is the only pair (batch of two).
    Deterministic given the state.
    """
    if state.phase in ("finished", "validating"):
        raise StateError(f"cannot optimize a query in phase {state.phase!r}")
    if len(state.batch) < 2:
        raise ValueError("batch must hold at least 2 profiles")
    cfg = state.config
    idx_i, idx_j, mi = mutual_information_scores(
        state.belief, state.batch, cfg.ranges, beta=cfg.model_beta
    )
    admissible = np.ones(len(idx_i), dtype=bool)
    if state.query_indices is not None and len(idx_i) > 1:
        prev = tuple(sorted(state.query_indices))
        admissible &= ~((idx_i == prev[0]) & (idx_j == prev[1]))
    if cfg.strategy == "mutual_information":
        scores = np.where(admissible, mi, -np.inf)
        k = int(np.argmax(scores))
    else:
        rng = np.random.default_rng(
            [cfg.derived_seeds()["query"], state.iteration]
        )
        candidates = np.flatnonzero(admissible)
        k = int(rng.choice(candidates))
    pair = (int(idx_i[k]), int(idx_j[k]))
    return Query(state.batch[pair[0]], state.batch[pair[1]]), pair


def present_next_query(state: SessionState) -> SessionState:
    """Attach the next optimized query and await the response."""
    query, pair = optimize_query(state)
    return replace(
        state, current_query=query, query_indices=pair, phase="awaiting_choice"
    )


def submit_choice(
    state: SessionState,
    chosen: str,
    responder: str = "human",
    timestamp: str | None = None,
) -> SessionState:
    """Record a response, update the belief over the full history, advance.

    Finishes the session (and fixes the preferred profile) after the
    configured number of comparisons; otherwise presents the next query.

    Raises:
        StateError: the session is not awaiting a choice.
    """
    if state.phase != "awaiting_choice":
        raise StateError(
            f"cannot submit a choice in phase {state.phase!r}"
        )
    cfg = state.config
    choice = Choice(
        query=state.current_query, selected=chosen,
        timestamp=timestamp, responder=responder,
    )
    history = state.history + (choice,)
    belief = mh_update(
        state.belief,
        history,
        ranges=cfg.ranges,
        beta=cfg.model_beta,
        sigma=cfg.proposal_std,
        burn_in=cfg.burn_in,
        thin=cfg.thin,
    )
    state = replace(state, history=history, belief=belief, phase="updating")
    if len(history) >= cfg.comparisons:
        summary = posterior_summary(belief, state.batch, cfg.ranges)
        return replace(
            state, phase="finished", final_index=summary.best_index,
            current_query=None, query_indices=None,
        )
    return present_next_query(state)


@dataclass(frozen=True)
class ValidationItem:
    """One preferred-vs-perturbed comparison; the preferred profile sits in
    a randomized slot."""

    query: Query
    preferred_slot: str  # "A" | "B"
    target: str
    sign: int

    @property
    def perturbed(self) -> TorqueProfileFeatures:
        return self.query.option("B" if self.preferred_slot == "A" else "A")

    def kept(self, chosen: str) -> bool:
        return chosen == self.preferred_slot


def validation_round(
    state: SessionState,
    preferred: TorqueProfileFeatures | None = None,
    targets: Sequence[str] | None = None,
) -> tuple[SessionState, list[ValidationItem]]:
    """Build the perturbation-validation queries for a finished session.

    One query per (target, sign): the preferred profile against a copy with
    that single feature shifted, slot assignment randomized by the session's
    validation seed. Perturbations that clamp back onto the preferred
    profile are skipped.
    """
    if state.phase not in ("finished", "validating"):
        raise StateError(
            f"validation requires a finished session, not {state.phase!r}"
        )
    if preferred is None:
        preferred = state.final_profile()
    if targets is None:
        targets = state.config.validation_targets
    rng = np.random.default_rng([state.config.derived_seeds()["validation"], 0])
    items = []
    for target in targets:
        for sign in (1, -1):
            perturbed = perturb(preferred, target, sign)
            if perturbed.as_tuple() == preferred.as_tuple():
                continue
            preferred_first = bool(rng.integers(0, 2))
            if preferred_first:
                query = Query(preferred, perturbed)
                slot = "A"
            else:
                query = Query(perturbed, preferred)
                slot = "B"
            items.append(
                ValidationItem(query=query, preferred_slot=slot,
                               target=target, sign=sign)
            )
    return replace(state, phase="validating"), items


@dataclass(frozen=True)
class ValidationOutcome:
    item: ValidationItem
    chosen: str

    @property
    def kept(self) -> bool:
        return self.item.kept(self.chosen)


def summarize_validation(outcomes: Sequence[ValidationOutcome]) -> dict:
    """Per-target keep/lose counts."""
    summary: dict[str, dict[str, int]] = {}
    for o in outcomes:
        row = summary.setdefault(o.item.target, {"keep": 0, "lose": 0})
        row["keep" if o.kept else "lose"] += 1
    return summary


def run_validation(
    state: SessionState,
    respond: Callable[[Query], str],
    targets: Sequence[str] | None = None,
) -> tuple[SessionState, list[ValidationOutcome]]:
    """Drive the validation round against a responder callable."""
    state, items = validation_round(state, targets=targets)
    outcomes = [ValidationOutcome(item, respond(item.query)) for item in items]
    return state, outcomes
