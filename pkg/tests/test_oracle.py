import json
import math

import numpy as np
import pytest

from prefgait.oracle import SimulatedUser
from prefgait.preference import Query, unit
from prefgait.profiles import FeatureRanges, TorqueProfileFeatures

from reference import logistic

RANGES = FeatureRanges()
HI = TorqueProfileFeatures(8.0, 15.0, 15.0, 6.5, 60.0, 15.0)
LO = TorqueProfileFeatures(5.0, 15.0, 15.0, 6.5, 60.0, 15.0)
W1 = np.array([1.0, 0, 0, 0, 0, 0])


def test_infinite_beta_is_argmax():
    user = SimulatedUser(w_star=W1, beta=math.inf, seed=0)
    q = Query(HI, LO)
    assert all(user.respond(q, RANGES) == "A" for _ in range(50))
    assert all(user.respond(Query(LO, HI), RANGES) == "B" for _ in range(50))


def test_infinite_beta_tie_goes_to_a():
    user = SimulatedUser(w_star=np.array([0, 1.0, 0, 0, 0, 0]), beta=math.inf)
    assert user.respond(Query(HI, LO), RANGES) == "A"


def test_beta_zero_uniform():
    user = SimulatedUser(w_star=W1, beta=0.0, seed=123)
    q = Query(HI, LO)
    freq = np.mean([user.respond(q, RANGES) == "A" for _ in range(1000)])
    assert freq == pytest.approx(0.5, abs=0.05)


def test_beta_one_matches_logistic_frequency():
    # reward gap 1 -> P(A) = logistic(1), binomial CI half-width < 0.03
    user = SimulatedUser(w_star=W1, beta=1.0, seed=7)
    q = Query(HI, LO)
    freq = np.mean([user.respond(q, RANGES) == "A" for _ in range(1000)])
    assert freq == pytest.approx(logistic(1.0), abs=0.03)


def test_deterministic_given_seed_and_sequence():
    queries = [Query(HI, LO), Query(LO, HI), Query(HI, LO)]
    a = SimulatedUser(w_star=W1, beta=0.7, seed=99)
    b = SimulatedUser(w_star=W1, beta=0.7, seed=99)
    assert [a.respond(q, RANGES) for q in queries] == [
        b.respond(q, RANGES) for q in queries
    ]


def test_response_frequencies_converge_to_likelihood():
    rng = np.random.default_rng(5)
    w = unit(rng.standard_normal(6))
    user = SimulatedUser(w_star=w, beta=2.0, seed=17)
    q = Query(HI, LO)
    p_a = np.mean([user.respond(q, RANGES) == "A" for _ in range(20000)])
    ra = user.true_reward(HI, RANGES)
    rb = user.true_reward(LO, RANGES)
    expected = logistic(2.0 * (ra - rb))
    assert p_a == pytest.approx(expected, abs=0.012)


def test_unit_norm_enforced():
    user = SimulatedUser(w_star=np.array([2.0, 0, 0, 0, 0, 0]))
    assert np.linalg.norm(user.w_star) == pytest.approx(1.0)


def test_feature_dropout_variant():
    user = SimulatedUser(w_star=W1, beta=math.inf, dropout_features=(0,))
    # with f1 blanked the two profiles tie -> A by convention
    assert user.respond(Query(LO, HI), RANGES) == "A"


def test_json_round_trip_including_inf():
    user = SimulatedUser(w_star=W1, beta=math.inf, seed=3,
                         dropout_features=(2, 4))
    d = json.loads(user.to_json())
    assert d["beta"] == "inf"
    back = SimulatedUser.from_dict(d)
    assert math.isinf(back.beta)
    assert back.seed == 3
    assert back.dropout_features == (2, 4)
    assert np.allclose(back.w_star, user.w_star)


def test_negative_beta_rejected():
    with pytest.raises(ValueError):
        SimulatedUser(w_star=W1, beta=-1.0)
