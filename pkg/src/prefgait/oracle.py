"""Simulated responder with ground-truth reward weights.

Stands in for the human during automated closed-loop runs. Responses are
drawn from the same softmax likelihood the learner fits, so model mismatch
is zero by construction; an optional feature-dropout flag degrades the
oracle for robustness experiments.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .preference import Query, pair_likelihood, unit
from .profiles import FeatureRanges, normalize_features


@dataclass
class SimulatedUser:
    """Softmax responder with true weights w_star and rationality beta.

    beta=0 answers uniformly at random, beta=inf picks the argmax
    deterministically (ties go to A). One rng per instance; responses are
    deterministic given (seed, query sequence). Not meant to be shared
    across sessions.
    """

    w_star: np.ndarray
    beta: float = 1.0
    seed: int = 0
    dropout_features: tuple[int, ...] = ()
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.w_star = unit(np.asarray(self.w_star, dtype=float))
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        self._rng = np.random.default_rng(self.seed)

    def true_reward(self, features, ranges: FeatureRanges) -> float:
        phi = normalize_features(features, ranges)
        if self.dropout_features:
            phi = phi.copy()
            phi[list(self.dropout_features)] = 0.0
        return float(np.dot(self.w_star, phi))

    def respond(self, query: Query, ranges: FeatureRanges | None = None) -> str:
        """Answer 'A' or 'B', sampled from the softmax over true rewards."""
        ranges = ranges if ranges is not None else FeatureRanges()
        ra = self.true_reward(query.option_a, ranges)
        rb = self.true_reward(query.option_b, ranges)
        if math.isinf(self.beta):
            return "A" if ra >= rb else "B"
        pa = pair_likelihood(ra, rb, self.beta)
        return "A" if self._rng.random() < pa else "B"

    def to_dict(self) -> dict:
        d = {
            "w_star": self.w_star.tolist(),
            "beta": "inf" if math.isinf(self.beta) else self.beta,
            "seed": self.seed,
        }
        if self.dropout_features:
            d["dropout_features"] = list(self.dropout_features)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "SimulatedUser":
        beta = d.get("beta", 1.0)
        if beta is None:
            beta = 1.0
        elif isinstance(beta, str):
            beta = float(beta)  # accepts "inf"
        return cls(
            w_star=np.array(d["w_star"], dtype=float),
            beta=beta,
            seed=int(d.get("seed", 0)),
            dropout_features=tuple(d.get("dropout_features", ())),
        )

    @classmethod
    def from_json(cls, text: str) -> "SimulatedUser":
        return cls.from_dict(json.loads(text))
