"""Linear preference model over profile features and its Bayesian belief.

The reward of a profile is a dot product of unit-norm weights with the
min-max normalized feature vector. Pairwise choices follow a softmax
(logistic in the reward difference, optionally sharpened by a rationality
factor). The belief over weights is a sample population on the unit sphere,
refreshed after every choice by re-running a Metropolis-Hastings chain over
the full choice history: the proposal perturbs the current point with an
isotropic Gaussian and renormalizes to the sphere, and acceptance uses the
standard posterior ratio (the proposal is treated as symmetric on the
sphere, a documented approximation). The prior is uniform on the sphere,
which fixes the reward scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import log_expit

from .profiles import FeatureRanges, TorqueProfileFeatures, normalize_features

N_FEATURES = 6

DEFAULT_N_SAMPLES = 100
DEFAULT_PROPOSAL_STD = 0.3
DEFAULT_BURN_IN = 200
DEFAULT_THIN = 25

#: Pre-normalization mean norm below which the posterior mean direction is
#: considered ill-defined.
DEGENERATE_MEAN_NORM = 0.1


class StateError(RuntimeError):
    """An operation was applied in an inadmissible state."""


def unit(v: np.ndarray) -> np.ndarray:
    """Normalize to unit L2 norm."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("cannot normalize the zero vector")
    return v / n


def random_unit_vectors(rng: np.random.Generator, n: int, dim: int = N_FEATURES) -> np.ndarray:
    """n points uniform on the unit sphere in R^dim (normalized Gaussians)."""
    g = rng.standard_normal((n, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass(frozen=True)
class Query:
    """An ordered pair of distinct profiles presented for comparison.

    ``swap_presentation`` flips which option the user experiences first;
    option identity (A/B) is unaffected.
    """

    option_a: TorqueProfileFeatures
    option_b: TorqueProfileFeatures
    swap_presentation: bool = False

    def __post_init__(self):
        if self.option_a == self.option_b:
            raise ValueError("query options must differ")

    def option(self, which: str) -> TorqueProfileFeatures:
        if which == "A":
            return self.option_a
        if which == "B":
            return self.option_b
        raise ValueError(f"option must be 'A' or 'B', got {which!r}")


@dataclass(frozen=True)
class Choice:
    """A recorded response to a query."""

    query: Query
    selected: str  # "A" | "B"
    timestamp: str | None = None  # UTC ISO-8601
    responder: str = "human"  # "human" | "oracle"

    def __post_init__(self):
        if self.selected not in ("A", "B"):
            raise ValueError(f"selected must be 'A' or 'B', got {self.selected!r}")
        if self.responder not in ("human", "oracle"):
            raise ValueError(f"unknown responder kind {self.responder!r}")

    @property
    def chosen(self) -> TorqueProfileFeatures:
        return self.query.option(self.selected)

    @property
    def rejected(self) -> TorqueProfileFeatures:
        return self.query.option("B" if self.selected == "A" else "A")


@dataclass(frozen=True)
class Belief:
    """Sample population representing the posterior over reward weights."""

    samples: np.ndarray  # (n_samples, dim), unit rows
    seed: int
    iteration: int = 0

    def __post_init__(self):
        if self.samples.ndim != 2 or len(self.samples) < 2:
            raise ValueError("belief needs at least 2 weight samples")

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "iteration": self.iteration,
            "samples": self.samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Belief":
        return cls(
            samples=np.array(d["samples"], dtype=float),
            seed=int(d["seed"]),
            iteration=int(d["iteration"]),
        )


def prior_belief(seed: int, n_samples: int = DEFAULT_N_SAMPLES, dim: int = N_FEATURES) -> Belief:
    """Uniform-on-the-sphere prior population."""
    rng = np.random.default_rng([seed, 0])
    return Belief(samples=random_unit_vectors(rng, n_samples, dim), seed=seed)


def reward(w: np.ndarray, features: TorqueProfileFeatures, ranges: FeatureRanges) -> float:
    """Linear reward: weights dotted with the normalized feature vector."""
    return float(np.dot(w, normalize_features(features, ranges)))


def softmax_pair(a: float, b: float) -> float:
    """exp(a) / (exp(a) + exp(b)) with max-subtraction for overflow safety."""
    m = max(a, b)
    ea = math.exp(a - m)
    eb = math.exp(b - m)
    return ea / (ea + eb)


def pair_likelihood(r_chosen: float, r_other: float, beta: float = 1.0) -> float:
    """Probability the higher-reward option wins under the softmax model.

    beta scales how deterministic the responder is; beta=1 is the plain
    softmax model, beta=inf the hard argmax (ties split evenly).
    """
    if beta < 0:
        raise ValueError(f"rationality beta must be >= 0, got {beta}")
    if math.isinf(beta):
        if r_chosen > r_other:
            return 1.0
        if r_chosen < r_other:
            return 0.0
        return 0.5
    return softmax_pair(beta * r_chosen, beta * r_other)


def choice_likelihood(
    w: np.ndarray,
    query: Query,
    chosen: str,
    beta: float = 1.0,
    ranges: FeatureRanges | None = None,
) -> float:
    """P(user picks ``chosen``) under weights w.

    P(A) and P(B) sum to 1.0 exactly: P(A) is computed by the stable softmax
    and P(B) as its complement.
    """
    ranges = ranges if ranges is not None else FeatureRanges()
    ra = reward(w, query.option_a, ranges)
    rb = reward(w, query.option_b, ranges)
    pa = pair_likelihood(ra, rb, beta)
    if chosen == "A":
        return pa
    if chosen == "B":
        return 1.0 - pa
    raise ValueError(f"chosen must be 'A' or 'B', got {chosen!r}")


def choice_diffs(choices: Sequence[Choice], ranges: FeatureRanges) -> np.ndarray:
    """Per-choice normalized-feature difference, chosen minus rejected.

    The softmax likelihood of a recorded choice reduces to the logistic of
    beta times (w . diff), which is what the sampler evaluates.
    """
    if not choices:
        return np.zeros((0, N_FEATURES))
    return np.array([
        normalize_features(c.chosen, ranges) - normalize_features(c.rejected, ranges)
        for c in choices
    ])


def log_posterior(w: np.ndarray, diffs: np.ndarray, beta: float) -> float:
    """Unnormalized log posterior on the sphere (uniform prior drops out)."""
    if len(diffs) == 0:
        return 0.0
    return float(np.sum(log_expit(beta * (diffs @ w))))


def sample_posterior(
    diffs: np.ndarray,
    beta: float,
    seed,
    n_samples: int = DEFAULT_N_SAMPLES,
    sigma: float = DEFAULT_PROPOSAL_STD,
    burn_in: int = DEFAULT_BURN_IN,
    thin: int = DEFAULT_THIN,
    dim: int = N_FEATURES,
    start: np.ndarray | None = None,
) -> np.ndarray:
    """Metropolis-Hastings samples from the choice posterior on the sphere.

    The chain starts at ``start`` (a prior draw when omitted), proposes
    w' = unit(w + sigma * g) with g standard normal, and accepts on the
    log-posterior ratio. The first ``burn_in`` accepted-or-not steps are
    discarded, then every ``thin``-th state is kept until ``n_samples`` are
    collected. Deterministic for a fixed seed. With no data this reduces to
    prior sampling.
    """
    rng = np.random.default_rng(seed)
    if len(diffs) == 0:
        return random_unit_vectors(rng, n_samples, dim)
    w = unit(start) if start is not None else random_unit_vectors(rng, 1, dim)[0]
    lp = log_posterior(w, diffs, beta)
    kept = np.empty((n_samples, dim))
    n_kept = 0
    step = 0
    total = burn_in + n_samples * thin
    while n_kept < n_samples:
        step += 1
        proposal = w + sigma * rng.standard_normal(dim)
        norm = np.linalg.norm(proposal)
        if norm > 0:
            proposal = proposal / norm
            lp_new = log_posterior(proposal, diffs, beta)
            if math.log(rng.random()) < lp_new - lp:
                w, lp = proposal, lp_new
        if step > burn_in and (step - burn_in) % thin == 0:
            kept[n_kept] = w
            n_kept += 1
        if step > total:  # pragma: no cover - loop structure guarantees exit
            raise RuntimeError("sampler failed to collect the requested samples")
    return kept


def mh_update(
    belief: Belief,
    all_choices: Sequence[Choice],
    ranges: FeatureRanges | None = None,
    beta: float = 1.0,
    sigma: float = DEFAULT_PROPOSAL_STD,
    burn_in: int = DEFAULT_BURN_IN,
    thin: int = DEFAULT_THIN,
) -> Belief:
    """Refresh the belief from the full accumulated choice history.

    A fresh chain is run over all choices each call (12 observations keep
    this cheap and it avoids sample impoverishment), warm-started at the
    previous population's mean direction so the burn-in is spent inside the
    posterior's mass. The chain seed derives from (belief.seed, update
    index), so replaying the same history is bit-reproducible. An empty
    history returns prior samples.
    """
    ranges = ranges if ranges is not None else FeatureRanges()
    iteration = belief.iteration + 1
    prev_mean = belief.samples.mean(axis=0)
    start = prev_mean if np.linalg.norm(prev_mean) > 1e-12 else None
    samples = sample_posterior(
        choice_diffs(all_choices, ranges),
        beta=beta,
        seed=[belief.seed, iteration],
        n_samples=belief.n_samples,
        sigma=sigma,
        burn_in=burn_in,
        thin=thin,
        dim=belief.dim,
        start=start,
    )
    return replace(belief, samples=samples, iteration=iteration)


@dataclass(frozen=True)
class PosteriorSummary:
    """Renormalized posterior mean, per-component spread, optional best
    batch profile."""

    mean: np.ndarray
    std: np.ndarray
    degenerate: bool
    best_index: int | None = None


def posterior_summary(
    belief: Belief,
    batch: Sequence[TorqueProfileFeatures] | None = None,
    ranges: FeatureRanges | None = None,
) -> PosteriorSummary:
    """Summarize the belief: mean direction, spread, preferred batch member.

    The mean over samples is renormalized to the sphere; if its
    pre-normalization norm is below 0.1 the direction is flagged degenerate
    (e.g. symmetric +/-w populations). The preferred profile maximizes the
    mean reward across samples, ties broken by lowest index.
    """
    raw_mean = belief.samples.mean(axis=0)
    raw_norm = float(np.linalg.norm(raw_mean))
    degenerate = raw_norm < DEGENERATE_MEAN_NORM
    mean = raw_mean / raw_norm if raw_norm > 1e-12 else raw_mean.copy()
    std = belief.samples.std(axis=0, ddof=0)
    best_index = None
    if batch is not None:
        ranges = ranges if ranges is not None else FeatureRanges()
        phi = np.array([normalize_features(p, ranges) for p in batch])
        mean_rewards = (belief.samples @ phi.T).mean(axis=0)
        best_index = int(np.argmax(mean_rewards))
    return PosteriorSummary(mean=mean, std=std, degenerate=degenerate,
                            best_index=best_index)
